//! Cross-fitted CATE learners. Every model attributed to fold `k` is trained
//! on the subjects outside fold `k` only.

use serde::{Deserialize, Serialize};

use crate::cate::forest::{CausalForest, FeatureMatrix, ForestSpec, RegressionForest};
use crate::cate::nuisance::NuisanceEstimates;
use crate::dataset::{FoldAssignment, TrialDataset};
use crate::error::{HteError, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LearnerKind {
    #[serde(rename = "causal_forest", alias = "CausalForest", alias = "cf")]
    CausalForest,
    #[serde(rename = "s", alias = "S")]
    S,
    #[serde(rename = "t", alias = "T")]
    T,
    #[serde(rename = "x", alias = "X")]
    X,
}

impl LearnerKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cf" | "causal_forest" | "causalforest" | "causal-forest" => Ok(LearnerKind::CausalForest),
            "s" => Ok(LearnerKind::S),
            "t" => Ok(LearnerKind::T),
            "x" => Ok(LearnerKind::X),
            _ => Err(HteError::Domain(format!(
                "unknown learner `{s}` (expected causal_forest, s, t or x)"
            ))),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            LearnerKind::CausalForest => "causal_forest",
            LearnerKind::S => "s",
            LearnerKind::T => "t",
            LearnerKind::X => "x",
        }
    }

    fn stream_id(self) -> u64 {
        match self {
            LearnerKind::CausalForest => 0,
            LearnerKind::S => 1,
            LearnerKind::T => 2,
            LearnerKind::X => 3,
        }
    }
}

/// Fitted components for one fold.
#[derive(Debug, Clone, PartialEq)]
pub enum FoldModel {
    CausalForest(CausalForest),
    /// One forest on `(X, A)`.
    S(RegressionForest),
    /// Control and treated outcome forests.
    T([RegressionForest; 2]),
    /// `g0` fitted on controls, `g1` on treated.
    X { g0: RegressionForest, g1: RegressionForest },
}

impl FoldModel {
    fn n_trees(&self) -> usize {
        match self {
            FoldModel::CausalForest(f) => f.trees().len(),
            FoldModel::S(f) => f.trees().len(),
            FoldModel::T([f0, f1]) => f0.trees().len() + f1.trees().len(),
            FoldModel::X { g0, g1 } => g0.trees().len() + g1.trees().len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CateModel {
    pub kind: LearnerKind,
    pub spec: ForestSpec,
    pub oof_scores: Vec<f64>,
    pub fold_models: Vec<FoldModel>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LearnerSummary {
    pub kind: LearnerKind,
    pub spec: ForestSpec,
    pub trees_per_fold: Vec<usize>,
}

impl CateModel {
    pub fn summary(&self) -> LearnerSummary {
        LearnerSummary {
            kind: self.kind,
            spec: self.spec.clone(),
            trees_per_fold: self.fold_models.iter().map(FoldModel::n_trees).collect(),
        }
    }
}

fn outcome_vector(data: &TrialDataset) -> Vec<f64> {
    data.outcome().iter().map(|&v| f64::from(v)).collect()
}

fn arm_rows(data: &TrialDataset, rows: &[usize], arm: u8) -> Result<Vec<usize>> {
    let out: Vec<usize> = rows.iter().copied().filter(|&i| data.treatment()[i] == arm).collect();
    if out.is_empty() {
        return Err(HteError::Positivity(format!("training set has no subjects with treatment {arm}")));
    }
    Ok(out)
}

fn check_folds(data: &TrialDataset, folds: &FoldAssignment) -> Result<()> {
    if folds.n() != data.n() {
        return Err(HteError::Alignment {
            what: "fold assignment",
            expected: data.n(),
            actual: folds.n(),
        });
    }
    Ok(())
}

pub fn fit_causal_forest(data: &TrialDataset, folds: &FoldAssignment, spec: &ForestSpec) -> Result<CateModel> {
    check_folds(data, folds)?;
    let x = FeatureMatrix::from_dataset(data);
    let y = outcome_vector(data);
    let mut oof_scores = vec![f64::NAN; data.n()];
    let mut fold_models = Vec::with_capacity(folds.k());
    for k in 0..folds.k() {
        let s = seed::derive(spec.seed, &[seed::stream::CAUSAL_FOREST, k as u64]);
        let forest = CausalForest::fit(&x, &y, data.treatment(), &folds.complement(k), spec, s)
            .map_err(|e| e.context(format!("causal forest for fold {}", k + 1)))?;
        for i in folds.members(k) {
            oof_scores[i] = forest.predict(&x, i);
        }
        fold_models.push(FoldModel::CausalForest(forest));
    }
    Ok(CateModel {
        kind: LearnerKind::CausalForest,
        spec: spec.clone(),
        oof_scores,
        fold_models,
    })
}

/// S-, T- or X-learner over honest regression forests. The X-learner weights
/// its two effect regressions by `nuisance.e_hat`.
pub fn fit_meta_learner(
    data: &TrialDataset,
    folds: &FoldAssignment,
    kind: LearnerKind,
    spec: &ForestSpec,
    nuisance: Option<&NuisanceEstimates>,
) -> Result<CateModel> {
    check_folds(data, folds)?;
    spec.validate()?;
    let y = outcome_vector(data);
    let mut oof_scores = vec![f64::NAN; data.n()];
    let mut fold_models = Vec::with_capacity(folds.k());
    let e_hat = match kind {
        LearnerKind::X => {
            let nu = nuisance.ok_or_else(|| HteError::Config("the X-learner needs propensity estimates".into()))?;
            nu.check_aligned(data.n())?;
            Some(&nu.e_hat)
        }
        LearnerKind::S | LearnerKind::T => None,
        LearnerKind::CausalForest => {
            return Err(HteError::Domain("the causal forest is not a meta-learner".into()));
        }
    };
    let x = FeatureMatrix::from_dataset(data);
    let xa = FeatureMatrix::with_treatment(data);
    let fold_seed = |k: usize, part: u64| seed::derive(spec.seed, &[seed::stream::META, kind.stream_id(), k as u64, part]);
    for k in 0..folds.k() {
        let train = folds.complement(k);
        let test = folds.members(k);
        let model = match kind {
            LearnerKind::S => {
                let f = RegressionForest::fit(&xa, &y, &train, spec, fold_seed(k, 0))?;
                let p = x.p();
                for &i in &test {
                    let mut row = xa.row(i);
                    row[p] = 1.0;
                    let m1 = f.predict_row(&row);
                    row[p] = 0.0;
                    oof_scores[i] = m1 - f.predict_row(&row);
                }
                FoldModel::S(f)
            }
            LearnerKind::T => {
                let f0 = RegressionForest::fit(&x, &y, &arm_rows(data, &train, 0)?, spec, fold_seed(k, 0))?;
                let f1 = RegressionForest::fit(&x, &y, &arm_rows(data, &train, 1)?, spec, fold_seed(k, 1))?;
                for &i in &test {
                    oof_scores[i] = f1.predict(&x, i) - f0.predict(&x, i);
                }
                FoldModel::T([f0, f1])
            }
            LearnerKind::X => {
                let controls = arm_rows(data, &train, 0)?;
                let treated = arm_rows(data, &train, 1)?;
                let m0 = RegressionForest::fit(&x, &y, &controls, spec, fold_seed(k, 0))?;
                let m1 = RegressionForest::fit(&x, &y, &treated, spec, fold_seed(k, 1))?;
                // imputed effects, both oriented so that they target tau
                let mut d = vec![0.0; data.n()];
                for &i in &treated {
                    d[i] = y[i] - m0.predict(&x, i);
                }
                for &i in &controls {
                    d[i] = m1.predict(&x, i) - y[i];
                }
                let g0 = RegressionForest::fit(&x, &d, &controls, spec, fold_seed(k, 2))?;
                let g1 = RegressionForest::fit(&x, &d, &treated, spec, fold_seed(k, 3))?;
                let e = e_hat.unwrap();
                for &i in &test {
                    oof_scores[i] = x_combine(e[i], g0.predict(&x, i), g1.predict(&x, i));
                }
                FoldModel::X { g0, g1 }
            }
            LearnerKind::CausalForest => unreachable!(),
        };
        fold_models.push(model);
    }
    Ok(CateModel {
        kind,
        spec: spec.clone(),
        oof_scores,
        fold_models,
    })
}

/// `w g0 + (1 - w) g1`.
pub fn x_combine(w: f64, g0: f64, g1: f64) -> f64 {
    w * g0 + (1.0 - w) * g1
}

/// Dispatches to the causal forest or a meta-learner.
pub fn fit_learner(
    data: &TrialDataset,
    folds: &FoldAssignment,
    kind: LearnerKind,
    spec: &ForestSpec,
    nuisance: Option<&NuisanceEstimates>,
) -> Result<CateModel> {
    match kind {
        LearnerKind::CausalForest => fit_causal_forest(data, folds, spec),
        _ => fit_meta_learner(data, folds, kind, spec, nuisance),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::make_folds;

    fn data(n: usize) -> TrialDataset {
        let x: Vec<f64> = (0..n).map(|i| ((i * 13) % 97) as f64 / 97.0).collect();
        let a: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
        let y = (0..n).map(|i| ((x[i] > 0.5 && a[i] == 1) || (i % 5 == 0)) as u8).collect();
        TrialDataset::new(vec!["x".into()], vec![x], a, y).unwrap()
    }

    fn spec() -> ForestSpec {
        ForestSpec {
            n_trees: 30,
            ..ForestSpec::default()
        }
    }

    #[test]
    fn x_combination_is_convex() {
        for w in [0.0, 0.2, 0.5, 1.0] {
            assert_eq!(x_combine(w, 0.3, 0.3), 0.3);
        }
    }

    #[test]
    fn learners_produce_bounded_scores() {
        let d = data(300);
        let folds = make_folds(&d, 3, 1).unwrap();
        let nu = NuisanceEstimates {
            e_hat: vec![0.5; 300],
            mu0_hat: vec![0.0; 300],
            mu1_hat: vec![0.0; 300],
            folds: std::sync::Arc::new(folds.clone()),
            clip: 0.01,
        };
        for kind in [LearnerKind::CausalForest, LearnerKind::S, LearnerKind::T, LearnerKind::X] {
            let m = fit_learner(&d, &folds, kind, &spec(), Some(&nu)).unwrap();
            assert_eq!(m.fold_models.len(), 3);
            assert!(m.oof_scores.iter().all(|s| s.is_finite() && s.abs() <= 1.0), "{kind:?}");
            let hi: f64 = (0..300).filter(|&i| d.column(0)[i] > 0.6).map(|i| m.oof_scores[i]).sum();
            let lo: f64 = (0..300).filter(|&i| d.column(0)[i] < 0.4).map(|i| m.oof_scores[i]).sum();
            assert!(hi > lo, "{kind:?} does not rank the effect region first");
        }
    }

    #[test]
    fn x_learner_requires_propensity() {
        let d = data(100);
        let folds = make_folds(&d, 2, 1).unwrap();
        assert!(matches!(
            fit_meta_learner(&d, &folds, LearnerKind::X, &spec(), None),
            Err(HteError::Config(_))
        ));
        assert!(matches!(
            fit_meta_learner(&d, &folds, LearnerKind::CausalForest, &spec(), None),
            Err(HteError::Domain(_))
        ));
    }

    #[test]
    fn kind_parsing() {
        assert_eq!(LearnerKind::parse("CF").unwrap(), LearnerKind::CausalForest);
        assert_eq!(LearnerKind::parse("x").unwrap(), LearnerKind::X);
        assert!(LearnerKind::parse("r").is_err());
    }
}
