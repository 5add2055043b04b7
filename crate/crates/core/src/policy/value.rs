//! Cross-fitted doubly robust value of threshold policies `1{score > t}`.

use serde::Serialize;

use crate::cate::nuisance::NuisanceEstimates;
use crate::dataset::TrialDataset;
use crate::error::{HteError, Result};
use crate::stats::quantile_sorted;

fn check_len(what: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(HteError::Alignment { what, expected, actual });
    }
    Ok(())
}

/// Per-subject DR value contributions under treatment (`.0`) and under
/// control (`.1`): `mu_a + 1{A = a} (Y - mu_a) / P(A = a)`.
pub fn value_terms(data: &TrialDataset, nuisance: &NuisanceEstimates) -> Result<(Vec<f64>, Vec<f64>)> {
    nuisance.check_aligned(data.n())?;
    let mut t1 = Vec::with_capacity(data.n());
    let mut t0 = Vec::with_capacity(data.n());
    for i in 0..data.n() {
        let a = data.treatment()[i];
        let y = f64::from(data.outcome()[i]);
        for (arm, out) in [(1u8, &mut t1), (0u8, &mut t0)] {
            let mu = nuisance.mu(arm, i);
            let correction = if a == arm { (y - mu) / nuisance.prob(arm, i) } else { 0.0 };
            out.push(mu + correction);
        }
    }
    Ok((t1, t0))
}

pub fn policy_value(data: &TrialDataset, nuisance: &NuisanceEstimates, policy: &[u8]) -> Result<f64> {
    check_len("policy", data.n(), policy.len())?;
    let (t1, t0) = value_terms(data, nuisance)?;
    Ok(value_from_terms(&t1, &t0, |i| policy[i] == 1, 0..data.n()))
}

fn value_from_terms(t1: &[f64], t0: &[f64], treat: impl Fn(usize) -> bool, rows: impl ExactSizeIterator<Item = usize>) -> f64 {
    let m = rows.len();
    rows.map(|i| if treat(i) { t1[i] } else { t0[i] }).sum::<f64>() / m as f64
}

/// Type-7 quantiles at `j / (n_quantiles + 1)`, deduplicated, between `-inf`
/// (treat all) and `+inf` (treat none).
pub fn threshold_grid(scores: &[f64], n_quantiles: usize) -> Result<Vec<f64>> {
    if n_quantiles == 0 {
        return Err(HteError::Config("threshold grid needs n_quantiles >= 1".into()));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut grid = vec![f64::NEG_INFINITY];
    if !sorted.is_empty() {
        for j in 1..=n_quantiles {
            let q = quantile_sorted(&sorted, j as f64 / (n_quantiles + 1) as f64);
            if grid.last() != Some(&q) {
                grid.push(q);
            }
        }
    }
    grid.push(f64::INFINITY);
    Ok(grid)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolicyValueCurve {
    #[serde(serialize_with = "crate::serde_float::vec")]
    pub thresholds: Vec<f64>,
    pub values: Vec<f64>,
    pub treated_fraction: Vec<f64>,
    pub value_treat_all: f64,
    pub value_treat_none: f64,
    #[serde(serialize_with = "crate::serde_float::scalar")]
    pub t_star: f64,
    pub v_star: f64,
    pub value_gain: f64,
    pub se: Option<Vec<f64>>,
}

impl PolicyValueCurve {
    /// True when the maximum is attained strictly between the extremes.
    pub fn interior_optimum(&self) -> bool {
        self.t_star.is_finite()
            && self.v_star > self.value_treat_all
            && self.v_star > self.value_treat_none
    }

    /// The smallest finite threshold on the grid.
    pub fn smallest_finite_threshold(&self) -> Option<f64> {
        self.thresholds.iter().copied().find(|t| t.is_finite())
    }
}

/// Index of the best value; ties go to the later (larger) threshold.
fn argmax_last(values: &[f64]) -> usize {
    let mut best = 0;
    for (j, v) in values.iter().enumerate() {
        if *v >= values[best] {
            best = j;
        }
    }
    best
}

pub fn value_curve(
    data: &TrialDataset,
    nuisance: &NuisanceEstimates,
    scores: &[f64],
    thresholds: &[f64],
) -> Result<PolicyValueCurve> {
    check_len("scores", data.n(), scores.len())?;
    if thresholds.len() < 2 {
        return Err(HteError::Config("value curve needs at least two thresholds".into()));
    }
    if thresholds.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(HteError::Domain("thresholds must be strictly increasing".into()));
    }
    let (t1, t0) = value_terms(data, nuisance)?;
    let n = data.n();
    let values: Vec<f64> = thresholds
        .iter()
        .map(|&t| value_from_terms(&t1, &t0, |i| scores[i] > t, 0..n))
        .collect();
    let treated_fraction = thresholds
        .iter()
        .map(|&t| scores.iter().filter(|&&s| s > t).count() as f64 / n as f64)
        .collect();
    let mut curve = PolicyValueCurve {
        thresholds: thresholds.to_vec(),
        values,
        treated_fraction,
        value_treat_all: value_from_terms(&t1, &t0, |_| true, 0..n),
        value_treat_none: value_from_terms(&t1, &t0, |_| false, 0..n),
        t_star: f64::NAN,
        v_star: f64::NAN,
        value_gain: f64::NAN,
        se: None,
    };
    let (t, v, g) = select_threshold(&curve);
    curve.t_star = t;
    curve.v_star = v;
    curve.value_gain = g;
    Ok(curve)
}

/// `(t*, V(t*), V(t*) - max(V(treat all), V(treat none)))`, ties toward the
/// larger threshold.
pub fn select_threshold(curve: &PolicyValueCurve) -> (f64, f64, f64) {
    let j = argmax_last(&curve.values);
    let v = curve.values[j];
    (curve.thresholds[j], v, v - curve.value_treat_all.max(curve.value_treat_none))
}

/// Evaluation-stage bootstrap standard errors of every point on the curve,
/// holding nuisances and scores fixed.
pub fn value_curve_se(
    data: &TrialDataset,
    nuisance: &NuisanceEstimates,
    scores: &[f64],
    thresholds: &[f64],
    replicates: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    check_len("scores", data.n(), scores.len())?;
    let (t1, t0) = value_terms(data, nuisance)?;
    thresholds
        .iter()
        .map(|&t| {
            let stat = |idx: &[usize]| value_from_terms(&t1, &t0, |i| scores[i] > t, idx.iter().copied());
            super::bootstrap::bootstrap_se(stat, data.n(), replicates, seed).map(|b| b.se)
        })
        .collect()
}
