//! Cross-fitted nuisance models: propensity `e(X)` and per-arm outcome
//! regressions `mu_a(X)`.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cate::forest::{FeatureMatrix, ForestSpec, RegressionForest};
use crate::dataset::{FoldAssignment, TrialDataset};
use crate::error::{HteError, Result};
use crate::seed;
use crate::stage1::glm::{covariate_design, fit_logistic, Design, GlmFit};

pub const DEFAULT_CLIP: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PropensityMode {
    /// Treated fraction of the training folds.
    Randomized,
    /// Main-effects logistic regression on the training folds.
    Modeled,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PropensityModel {
    Constant(f64),
    Logistic(GlmFit),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropensityFit {
    pub e_hat: Vec<f64>,
    /// One model per fold, trained on that fold's complement.
    pub models: Vec<PropensityModel>,
    /// Number of predictions moved onto a clipping bound.
    pub n_clipped: usize,
}

fn check_arms(data: &TrialDataset, rows: &[usize], what: &str) -> Result<()> {
    let treated = rows.iter().filter(|&&i| data.treatment()[i] == 1).count();
    if treated == 0 || treated == rows.len() {
        return Err(HteError::Positivity(format!("{what} contains a single treatment arm")));
    }
    Ok(())
}

fn check_alignment(data: &TrialDataset, folds: &FoldAssignment) -> Result<()> {
    if folds.n() != data.n() {
        return Err(HteError::Alignment {
            what: "fold assignment",
            expected: data.n(),
            actual: folds.n(),
        });
    }
    Ok(())
}

fn subset(design: &Design, rows: &[usize]) -> Design {
    Design {
        names: design.names.clone(),
        columns: design.columns.iter().map(|c| rows.iter().map(|&i| c[i]).collect()).collect(),
    }
}

pub fn fit_propensity(data: &TrialDataset, folds: &FoldAssignment, mode: PropensityMode, clip: f64) -> Result<PropensityFit> {
    check_alignment(data, folds)?;
    if !(clip > 0.0 && clip < 0.5) {
        return Err(HteError::Config(format!("propensity clip {clip} is not in (0, 0.5)")));
    }
    let a = data.treatment();
    let design = match mode {
        PropensityMode::Modeled => Some(covariate_design(data)),
        PropensityMode::Randomized => None,
    };
    let mut e_hat = vec![f64::NAN; data.n()];
    let mut models = Vec::with_capacity(folds.k());
    let mut n_clipped = 0;
    for k in 0..folds.k() {
        let train = folds.complement(k);
        check_arms(data, &train, &format!("training complement of fold {}", k + 1))?;
        let model = match &design {
            None => {
                let treated = train.iter().filter(|&&i| a[i] == 1).count();
                PropensityModel::Constant(treated as f64 / train.len() as f64)
            }
            Some(design) => {
                let y: Vec<u8> = train.iter().map(|&i| a[i]).collect();
                let fit = match fit_logistic(&subset(design, &train), &y) {
                    Ok(fit) => fit,
                    Err(HteError::Separation { column, fit }) => {
                        log::warn!("propensity model separates on `{column}`; predictions will be clipped");
                        *fit
                    }
                    Err(HteError::NonConvergence { fit }) => {
                        log::warn!("propensity model did not converge in fold {}", k + 1);
                        *fit
                    }
                    Err(e) => return Err(e),
                };
                PropensityModel::Logistic(fit)
            }
        };
        for i in folds.members(k) {
            let raw = match &model {
                PropensityModel::Constant(e) => *e,
                PropensityModel::Logistic(fit) => {
                    let row: Vec<f64> = design.as_ref().unwrap().columns.iter().map(|c| c[i]).collect();
                    crate::simgen::sigmoid(fit.linear_predictor(&row))
                }
            };
            let e = raw.clamp(clip, 1.0 - clip);
            if e != raw {
                n_clipped += 1;
            }
            e_hat[i] = e;
        }
        models.push(model);
    }
    if n_clipped > 0 {
        log::warn!("{n_clipped} propensity prediction(s) clipped to [{clip}, {}]", 1.0 - clip);
    }
    Ok(PropensityFit {
        e_hat,
        models,
        n_clipped,
    })
}

/// Per-fold, per-arm honest regression forests.
#[derive(Debug, Clone, PartialEq)]
pub struct OutcomeModels {
    pub mu0_hat: Vec<f64>,
    pub mu1_hat: Vec<f64>,
    /// `forests[k][a]` was trained on arm `a` outside fold `k`.
    pub forests: Vec<[RegressionForest; 2]>,
}

pub fn fit_outcomes(data: &TrialDataset, folds: &FoldAssignment, spec: &ForestSpec) -> Result<OutcomeModels> {
    check_alignment(data, folds)?;
    spec.validate()?;
    let x = FeatureMatrix::from_dataset(data);
    let y: Vec<f64> = data.outcome().iter().map(|&v| f64::from(v)).collect();
    let a = data.treatment();
    let jobs: Vec<(usize, u8)> = (0..folds.k()).flat_map(|k| [(k, 0u8), (k, 1u8)]).collect();
    let fitted: Vec<RegressionForest> = jobs
        .par_iter()
        .map(|&(k, arm)| {
            let rows: Vec<usize> = folds.complement(k).into_iter().filter(|&i| a[i] == arm).collect();
            if rows.is_empty() {
                return Err(HteError::Positivity(format!(
                    "training complement of fold {} has no subjects with treatment {arm}",
                    k + 1
                )));
            }
            let s = seed::derive(spec.seed, &[seed::stream::OUTCOME_FOREST, k as u64, u64::from(arm)]);
            RegressionForest::fit(&x, &y, &rows, spec, s)
        })
        .collect::<Result<_>>()?;
    let mut mu0_hat = vec![f64::NAN; data.n()];
    let mut mu1_hat = vec![f64::NAN; data.n()];
    let mut forests = Vec::with_capacity(folds.k());
    let mut it = fitted.into_iter();
    for k in 0..folds.k() {
        let f0 = it.next().unwrap();
        let f1 = it.next().unwrap();
        for i in folds.members(k) {
            mu0_hat[i] = f0.predict(&x, i).clamp(0.0, 1.0);
            mu1_hat[i] = f1.predict(&x, i).clamp(0.0, 1.0);
        }
        forests.push([f0, f1]);
    }
    Ok(OutcomeModels {
        mu0_hat,
        mu1_hat,
        forests,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct NuisanceEstimates {
    pub e_hat: Vec<f64>,
    pub mu0_hat: Vec<f64>,
    pub mu1_hat: Vec<f64>,
    pub folds: Arc<FoldAssignment>,
    pub clip: f64,
}

impl NuisanceEstimates {
    pub fn n(&self) -> usize {
        self.e_hat.len()
    }

    pub fn mu(&self, arm: u8, i: usize) -> f64 {
        if arm == 1 {
            self.mu1_hat[i]
        } else {
            self.mu0_hat[i]
        }
    }

    /// Estimated probability of receiving `arm`.
    pub fn prob(&self, arm: u8, i: usize) -> f64 {
        if arm == 1 {
            self.e_hat[i]
        } else {
            1.0 - self.e_hat[i]
        }
    }

    pub(crate) fn check_aligned(&self, n: usize) -> Result<()> {
        for (what, len) in [
            ("e_hat", self.e_hat.len()),
            ("mu0_hat", self.mu0_hat.len()),
            ("mu1_hat", self.mu1_hat.len()),
        ] {
            if len != n {
                return Err(HteError::Alignment {
                    what,
                    expected: n,
                    actual: len,
                });
            }
        }
        Ok(())
    }
}

/// Propensity and outcome models on one shared fold partition.
pub fn fit_nuisance(
    data: &TrialDataset,
    folds: &Arc<FoldAssignment>,
    mode: PropensityMode,
    clip: f64,
    spec: &ForestSpec,
) -> Result<NuisanceEstimates> {
    let e = fit_propensity(data, folds, mode, clip)?;
    let mu = fit_outcomes(data, folds, spec)?;
    Ok(NuisanceEstimates {
        e_hat: e.e_hat,
        mu0_hat: mu.mu0_hat,
        mu1_hat: mu.mu1_hat,
        folds: Arc::clone(folds),
        clip,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::make_folds;

    fn toy(n: usize) -> TrialDataset {
        TrialDataset::new(
            vec!["x".into()],
            vec![(0..n).map(|i| (i as f64 * 0.37).sin()).collect()],
            (0..n).map(|i| (i % 2) as u8).collect(),
            (0..n).map(|i| ((i * 7) % 3 == 0) as u8).collect(),
        )
        .unwrap()
    }

    fn small_spec() -> ForestSpec {
        ForestSpec {
            n_trees: 20,
            ..ForestSpec::default()
        }
    }

    #[test]
    fn balanced_randomized_propensity_is_half() {
        let d = toy(200);
        let folds = make_folds(&d, 5, 3).unwrap();
        let e = fit_propensity(&d, &folds, PropensityMode::Randomized, DEFAULT_CLIP).unwrap();
        assert!(e.e_hat.iter().all(|&v| v == 0.5));
        assert_eq!(e.models.len(), 5);
    }

    #[test]
    fn separating_covariate_is_clipped() {
        let n = 100;
        let a: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
        let d = TrialDataset::new(
            vec!["x".into()],
            vec![a.iter().map(|&v| f64::from(v) * 2.0 - 1.0).collect()],
            a,
            (0..n).map(|i| (i % 3 == 0) as u8).collect(),
        )
        .unwrap();
        let folds = make_folds(&d, 5, 1).unwrap();
        let e = fit_propensity(&d, &folds, PropensityMode::Modeled, DEFAULT_CLIP).unwrap();
        assert_eq!(e.n_clipped, n);
        assert!(e.e_hat.iter().all(|&v| v == 0.01 || v == 0.99));
    }

    #[test]
    fn constant_outcome_gives_constant_mu() {
        let d = toy(120).with_outcome(vec![1; 120]).unwrap();
        let folds = make_folds(&d, 5, 2).unwrap();
        let mu = fit_outcomes(&d, &folds, &small_spec()).unwrap();
        assert!(mu.mu0_hat.iter().chain(&mu.mu1_hat).all(|&v| v == 1.0));
    }

    #[test]
    fn outcome_fits_are_deterministic() {
        let d = toy(150);
        let folds = make_folds(&d, 3, 2).unwrap();
        let a = fit_outcomes(&d, &folds, &small_spec()).unwrap();
        let b = fit_outcomes(&d, &folds, &small_spec()).unwrap();
        assert_eq!(a.mu0_hat, b.mu0_hat);
        assert_eq!(a.mu1_hat, b.mu1_hat);
    }
}
