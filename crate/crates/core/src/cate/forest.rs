//! Honest random forests: a regression forest (leaf means) and a causal
//! forest (leaf treatment-control contrasts).
//!
//! Each tree draws a subsample without replacement, grows its structure on
//! one part and fills its leaves from the other. Split thresholds are order
//! statistics of the growing half: `x <= threshold` goes left, where the
//! threshold is the largest value sent left. Predictions are therefore
//! unchanged by any strictly increasing transform of a covariate.

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::TrialDataset;
use crate::error::{HteError, Result};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestSpec {
    pub n_trees: usize,
    pub min_leaf_per_arm: usize,
    /// Covariates tried per split; `None` means `ceil(sqrt(p))`.
    pub mtry: Option<usize>,
    pub subsample_fraction: f64,
    pub honesty_fraction: f64,
    pub seed: u64,
}

impl Default for ForestSpec {
    fn default() -> Self {
        ForestSpec {
            n_trees: 500,
            min_leaf_per_arm: 5,
            mtry: None,
            subsample_fraction: 0.5,
            honesty_fraction: 0.5,
            seed: 0,
        }
    }
}

impl ForestSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 || self.min_leaf_per_arm == 0 || self.mtry == Some(0) {
            return Err(HteError::Config(
                "forest n_trees, min_leaf_per_arm and mtry must be positive".into(),
            ));
        }
        for (name, f) in [
            ("subsample_fraction", self.subsample_fraction),
            ("honesty_fraction", self.honesty_fraction),
        ] {
            if !(f > 0.0 && f <= 1.0) {
                return Err(HteError::Config(format!("{name} {f} is not in (0,1]")));
            }
        }
        Ok(())
    }

    pub fn mtry_for(&self, p: usize) -> usize {
        self.mtry
            .unwrap_or_else(|| (p as f64).sqrt().ceil() as usize)
            .clamp(1, p.max(1))
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        ForestSpec {
            seed,
            ..self.clone()
        }
    }
}

/// Column-major feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    columns: Vec<Vec<f64>>,
}

impl FeatureMatrix {
    pub fn new(columns: Vec<Vec<f64>>) -> Self {
        FeatureMatrix { columns }
    }

    pub fn from_dataset(data: &TrialDataset) -> Self {
        FeatureMatrix {
            columns: data.columns().to_vec(),
        }
    }

    /// Covariates followed by the treatment indicator as a last column.
    pub fn with_treatment(data: &TrialDataset) -> Self {
        let mut columns = data.columns().to_vec();
        columns.push(data.treatment().iter().map(|&a| f64::from(a)).collect());
        FeatureMatrix { columns }
    }

    pub fn p(&self) -> usize {
        self.columns.len()
    }

    pub fn n(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.columns[j][i]
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.columns.iter().map(|c| c[i]).collect()
    }
}

const LEAF: usize = usize::MAX;

#[derive(Debug, Clone, PartialEq)]
struct Node {
    feature: usize,
    threshold: f64,
    left: usize,
    right: usize,
    value: f64,
}

impl Node {
    fn leaf(value: f64) -> Self {
        Node {
            feature: LEAF,
            threshold: 0.0,
            left: 0,
            right: 0,
            value,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    #[inline]
    pub fn predict_with(&self, feature: impl Fn(usize) -> f64) -> f64 {
        let mut id = 0;
        loop {
            let node = &self.nodes[id];
            if node.feature == LEAF {
                return node.value;
            }
            id = if feature(node.feature) <= node.threshold {
                node.left
            } else {
                node.right
            };
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| n.feature == LEAF).count()
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], id: usize) -> usize {
            let n = &nodes[id];
            if n.feature == LEAF {
                0
            } else {
                1 + walk(nodes, n.left).max(walk(nodes, n.right))
            }
        }
        walk(&self.nodes, 0)
    }

    /// Features used by internal nodes, in node order.
    pub fn split_features(&self) -> Vec<usize> {
        self.nodes.iter().filter(|n| n.feature != LEAF).map(|n| n.feature).collect()
    }
}

/// Split scoring and leaf estimation for one kind of tree.
trait Criterion: Sync {
    fn can_split(&self, members: &[usize]) -> bool;
    /// Leaf estimate from `members`, or `None` when it is undefined.
    fn leaf_value(&self, members: &[usize]) -> Option<f64>;
    /// Best `(gain, threshold)` over the members sorted by one covariate.
    fn best_split(&self, sorted: &[(f64, usize)]) -> Option<(f64, f64)>;
}

struct SquaredError<'a> {
    y: &'a [f64],
    min_leaf: usize,
}

impl Criterion for SquaredError<'_> {
    fn can_split(&self, members: &[usize]) -> bool {
        members.len() >= 2 * self.min_leaf
    }

    fn leaf_value(&self, members: &[usize]) -> Option<f64> {
        if members.is_empty() {
            return None;
        }
        Some(members.iter().map(|&i| self.y[i]).sum::<f64>() / members.len() as f64)
    }

    fn best_split(&self, sorted: &[(f64, usize)]) -> Option<(f64, f64)> {
        let n = sorted.len();
        let total: f64 = sorted.iter().map(|&(_, i)| self.y[i]).sum();
        let base = total * total / n as f64;
        let mut left = 0.0;
        let mut best: Option<(f64, f64)> = None;
        for k in 1..n {
            left += self.y[sorted[k - 1].1];
            if k < self.min_leaf {
                continue;
            }
            if n - k < self.min_leaf {
                break;
            }
            if sorted[k - 1].0 == sorted[k].0 {
                continue;
            }
            let right = total - left;
            let gain = left * left / k as f64 + right * right / (n - k) as f64 - base;
            if gain > 1e-12 && best.is_none_or(|(g, _)| gain > g) {
                best = Some((gain, sorted[k - 1].0));
            }
        }
        best
    }
}

struct TreatmentContrast<'a> {
    y: &'a [f64],
    w: &'a [u8],
    min_per_arm: usize,
}

impl TreatmentContrast<'_> {
    fn arm_counts(&self, members: &[usize]) -> (usize, usize) {
        let treated = members.iter().filter(|&&i| self.w[i] == 1).count();
        (treated, members.len() - treated)
    }
}

impl Criterion for TreatmentContrast<'_> {
    fn can_split(&self, members: &[usize]) -> bool {
        let (n1, n0) = self.arm_counts(members);
        n1 >= 2 * self.min_per_arm && n0 >= 2 * self.min_per_arm
    }

    fn leaf_value(&self, members: &[usize]) -> Option<f64> {
        let (mut n1, mut n0, mut s1, mut s0) = (0usize, 0usize, 0.0, 0.0);
        for &i in members {
            if self.w[i] == 1 {
                n1 += 1;
                s1 += self.y[i];
            } else {
                n0 += 1;
                s0 += self.y[i];
            }
        }
        (n1 > 0 && n0 > 0).then(|| s1 / n1 as f64 - s0 / n0 as f64)
    }

    fn best_split(&self, sorted: &[(f64, usize)]) -> Option<(f64, f64)> {
        let n = sorted.len();
        let (mut t1, mut t0, mut c1, mut c0) = (0.0, 0.0, 0usize, 0usize);
        for &(_, i) in sorted {
            if self.w[i] == 1 {
                t1 += self.y[i];
                c1 += 1;
            } else {
                t0 += self.y[i];
                c0 += 1;
            }
        }
        let m = self.min_per_arm;
        let (mut l1, mut l0, mut n1, mut n0) = (0.0, 0.0, 0usize, 0usize);
        let mut best: Option<(f64, f64)> = None;
        for k in 1..n {
            let i = sorted[k - 1].1;
            if self.w[i] == 1 {
                l1 += self.y[i];
                n1 += 1;
            } else {
                l0 += self.y[i];
                n0 += 1;
            }
            if sorted[k - 1].0 == sorted[k].0 || n1 < m || n0 < m {
                continue;
            }
            let (r1, r0) = (c1 - n1, c0 - n0);
            if r1 < m || r0 < m {
                if r1 + r0 < 2 * m {
                    break;
                }
                continue;
            }
            let tau_l = l1 / n1 as f64 - l0 / n0 as f64;
            let tau_r = (t1 - l1) / r1 as f64 - (t0 - l0) / r0 as f64;
            let (nl, nr) = (k as f64, (n - k) as f64);
            let gain = nl * nr * (tau_l - tau_r).powi(2) / (n as f64 * n as f64);
            if gain > 1e-15 && best.is_none_or(|(g, _)| gain > g) {
                best = Some((gain, sorted[k - 1].0));
            }
        }
        best
    }
}

fn grow_tree<C: Criterion, R: Rng>(
    x: &FeatureMatrix,
    crit: &C,
    grow: Vec<usize>,
    est: Vec<usize>,
    mtry: usize,
    rng: &mut R,
) -> Tree {
    let root = crit
        .leaf_value(&est)
        .or_else(|| crit.leaf_value(&grow))
        .unwrap_or(0.0);
    let mut nodes = vec![Node::leaf(root)];
    let mut stack = vec![(0usize, grow, est)];
    let mut features: Vec<usize> = (0..x.p()).collect();
    let mut sorted: Vec<(f64, usize)> = Vec::new();
    while let Some((id, grow, est)) = stack.pop() {
        if !crit.can_split(&grow) {
            continue;
        }
        let (chosen, _) = features.partial_shuffle(rng, mtry);
        let mut best: Option<(f64, usize, f64)> = None;
        for &f in chosen.iter() {
            sorted.clear();
            sorted.extend(grow.iter().map(|&i| (x.get(i, f), i)));
            sorted.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            if let Some((gain, threshold)) = crit.best_split(&sorted) {
                let better = match best {
                    None => true,
                    Some((g, bf, bt)) => gain > g || (gain == g && (f < bf || (f == bf && threshold < bt))),
                };
                if better {
                    best = Some((gain, f, threshold));
                }
            }
        }
        let Some((_, f, threshold)) = best else { continue };
        let (grow_l, grow_r): (Vec<usize>, Vec<usize>) = grow.iter().partition(|&&i| x.get(i, f) <= threshold);
        let (est_l, est_r): (Vec<usize>, Vec<usize>) = est.iter().partition(|&&i| x.get(i, f) <= threshold);
        let parent = nodes[id].value;
        let left = nodes.len();
        nodes.push(Node::leaf(crit.leaf_value(&est_l).unwrap_or(parent)));
        nodes.push(Node::leaf(crit.leaf_value(&est_r).unwrap_or(parent)));
        let node = &mut nodes[id];
        node.feature = f;
        node.threshold = threshold;
        node.left = left;
        node.right = left + 1;
        stack.push((left + 1, grow_r, est_r));
        stack.push((left, grow_l, est_l));
    }
    Tree { nodes }
}

fn grow_forest<C: Criterion>(x: &FeatureMatrix, crit: &C, rows: &[usize], spec: &ForestSpec, seed: u64) -> Vec<Tree> {
    let mtry = spec.mtry_for(x.p());
    let m = ((rows.len() as f64 * spec.subsample_fraction).round() as usize).clamp(2.min(rows.len()), rows.len());
    (0..spec.n_trees as u64)
        .into_par_iter()
        .map(|t| {
            let mut rng = seed::derived_rng(seed, &[t]);
            let sample: Vec<usize> = index::sample(&mut rng, rows.len(), m).into_iter().map(|k| rows[k]).collect();
            let (grow, est) = if spec.honesty_fraction >= 1.0 {
                (sample.clone(), sample)
            } else {
                let n_grow = ((m as f64 * spec.honesty_fraction).round() as usize).clamp(1, m.saturating_sub(1).max(1));
                let mut grow = sample;
                let est = grow.split_off(n_grow);
                (grow, est)
            };
            grow_tree(x, crit, grow, est, mtry, &mut rng)
        })
        .collect()
}

fn average<F: Fn(&Tree) -> f64 + Sync>(trees: &[Tree], f: F) -> f64 {
    trees.iter().map(f).sum::<f64>() / trees.len() as f64
}

/// Honest regression forest; predictions are averages of leaf means.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionForest {
    trees: Vec<Tree>,
}

impl RegressionForest {
    /// Fits on the subjects in `rows` with targets `y` (indexed like `x`).
    pub fn fit(x: &FeatureMatrix, y: &[f64], rows: &[usize], spec: &ForestSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        if rows.is_empty() {
            return Err(HteError::Positivity("regression forest has no training subjects".into()));
        }
        let crit = SquaredError {
            y,
            min_leaf: spec.min_leaf_per_arm,
        };
        Ok(RegressionForest {
            trees: grow_forest(x, &crit, rows, spec, seed),
        })
    }

    pub fn predict(&self, x: &FeatureMatrix, i: usize) -> f64 {
        average(&self.trees, |t| t.predict_with(|f| x.get(i, f)))
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        average(&self.trees, |t| t.predict_with(|f| row[f]))
    }

    pub fn predict_many(&self, x: &FeatureMatrix, rows: &[usize]) -> Vec<f64> {
        rows.iter().map(|&i| self.predict(x, i)).collect()
    }

    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }
}

/// Honest causal forest; leaves hold treated-minus-control mean differences.
#[derive(Debug, Clone, PartialEq)]
pub struct CausalForest {
    trees: Vec<Tree>,
}

impl CausalForest {
    pub fn fit(x: &FeatureMatrix, y: &[f64], w: &[u8], rows: &[usize], spec: &ForestSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let treated = rows.iter().filter(|&&i| w[i] == 1).count();
        let control = rows.len() - treated;
        let need = 2 * spec.min_leaf_per_arm;
        if treated < need || control < need {
            return Err(HteError::Infeasible(format!(
                "causal forest needs at least {need} subjects per arm (have {treated} treated, {control} control); \
                 reduce min_leaf_per_arm"
            )));
        }
        let crit = TreatmentContrast {
            y,
            w,
            min_per_arm: spec.min_leaf_per_arm,
        };
        Ok(CausalForest {
            trees: grow_forest(x, &crit, rows, spec, seed),
        })
    }

    pub fn predict(&self, x: &FeatureMatrix, i: usize) -> f64 {
        average(&self.trees, |t| t.predict_with(|f| x.get(i, f)))
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        average(&self.trees, |t| t.predict_with(|f| row[f]))
    }

    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(n_trees: usize) -> ForestSpec {
        ForestSpec {
            n_trees,
            ..ForestSpec::default()
        }
    }

    #[test]
    fn regression_forest_recovers_a_step() {
        let n = 600;
        let x: Vec<f64> = (0..n).map(|i| (i as f64 * 0.618).fract() * 2.0 - 1.0).collect();
        let y: Vec<f64> = x.iter().map(|&v| if v > 0.0 { 1.0 } else { 0.0 }).collect();
        let fm = FeatureMatrix::new(vec![x]);
        let rows: Vec<usize> = (0..n).collect();
        let f = RegressionForest::fit(&fm, &y, &rows, &spec(100), 3).unwrap();
        assert!(f.predict_row(&[0.8]) > 0.95);
        assert!(f.predict_row(&[-0.8]) < 0.05);
    }

    #[test]
    fn constant_target_gives_constant_prediction() {
        let n = 200;
        let fm = FeatureMatrix::new(vec![(0..n).map(|i| i as f64).collect()]);
        let y = vec![1.0; n];
        let rows: Vec<usize> = (0..n).collect();
        let f = RegressionForest::fit(&fm, &y, &rows, &spec(20), 1).unwrap();
        for i in 0..n {
            assert_eq!(f.predict(&fm, i), 1.0);
        }
    }

    #[test]
    fn causal_forest_finds_sign_change() {
        let n = 2000;
        let x: Vec<f64> = (0..n).map(|i| (i as f64 * 0.754877).fract() * 2.0 - 1.0).collect();
        let w: Vec<u8> = (0..n).map(|i| ((i * 7919) % 13 < 6) as u8).collect();
        // effect +0.6 for x > 0, -0.6 otherwise; baseline 0.2
        let y: Vec<f64> = (0..n)
            .map(|i| {
                let base = (i as f64 * 0.3819).fract();
                let eff = if x[i] > 0.0 { 0.6 } else { -0.6 };
                let p = 0.5 + if w[i] == 1 { eff / 2.0 } else { -eff / 2.0 } * 0.9;
                if base < p { 1.0 } else { 0.0 }
            })
            .collect();
        let fm = FeatureMatrix::new(vec![x]);
        let rows: Vec<usize> = (0..n).collect();
        let f = CausalForest::fit(&fm, &y, &w, &rows, &spec(200), 5).unwrap();
        assert!(f.predict_row(&[0.7]) > 0.3, "{}", f.predict_row(&[0.7]));
        assert!(f.predict_row(&[-0.7]) < -0.3, "{}", f.predict_row(&[-0.7]));
    }

    #[test]
    fn causal_forest_rejects_tiny_arms() {
        let fm = FeatureMatrix::new(vec![(0..12).map(|i| i as f64).collect()]);
        let w = vec![1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 1];
        let y = vec![0.0; 12];
        let rows: Vec<usize> = (0..12).collect();
        assert!(matches!(
            CausalForest::fit(&fm, &y, &w, &rows, &spec(5), 0),
            Err(HteError::Infeasible(_))
        ));
    }

    #[test]
    fn forests_are_deterministic() {
        let n = 300;
        let fm = FeatureMatrix::new(vec![
            (0..n).map(|i| (i as f64 * 0.31).sin()).collect(),
            (0..n).map(|i| (i as f64 * 0.17).cos()).collect(),
        ]);
        let y: Vec<f64> = (0..n).map(|i| ((i * 31) % 7 < 3) as u8 as f64).collect();
        let rows: Vec<usize> = (0..n).collect();
        let a = RegressionForest::fit(&fm, &y, &rows, &spec(30), 8).unwrap();
        let b = RegressionForest::fit(&fm, &y, &rows, &spec(30), 8).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn spec_validation() {
        assert!(ForestSpec { n_trees: 0, ..ForestSpec::default() }.validate().is_err());
        assert!(ForestSpec { honesty_fraction: 0.0, ..ForestSpec::default() }.validate().is_err());
        assert!(ForestSpec { subsample_fraction: 1.0, ..ForestSpec::default() }.validate().is_ok());
        assert_eq!(ForestSpec::default().mtry_for(3), 2);
        assert_eq!(ForestSpec::default().mtry_for(16), 4);
    }
}
