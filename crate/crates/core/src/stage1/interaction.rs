//! Omnibus likelihood-ratio and per-term Wald tests of treatment-covariate
//! interaction in the logistic model for `E[Y | A, X]`.

use serde::Serialize;

use crate::dataset::TrialDataset;
use crate::error::{HteError, Result, ResultExt};
use crate::stage1::dist::{chisq_sf, two_sided_p};
use crate::stage1::glm::{fit_logistic, interaction_name, treatment_design, GlmFit};
use crate::stage1::multiplicity::adjust_holm;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LrtResult {
    pub stat: f64,
    pub df: usize,
    pub p: f64,
}

/// Reduced model `1 + A + X`, full model adds every `A*X_j`;
/// `stat = 2 (ll_full - ll_reduced)` on `p` degrees of freedom.
pub fn lrt_omnibus(data: &TrialDataset) -> Result<LrtResult> {
    if data.p() == 0 {
        return Ok(LrtResult { stat: 0.0, df: 0, p: 1.0 });
    }
    let reduced = fit_logistic(&treatment_design(data, false)?, data.outcome()).context("reduced (main-effects) model")?;
    let full = fit_full(data)?;
    lrt_from_fits(&reduced, &full)
}

fn fit_full(data: &TrialDataset) -> Result<GlmFit> {
    fit_logistic(&treatment_design(data, true)?, data.outcome()).context("full (interaction) model")
}

pub fn lrt_from_fits(reduced: &GlmFit, full: &GlmFit) -> Result<LrtResult> {
    let df = full.coefficients.len().saturating_sub(reduced.coefficients.len());
    if df == 0 {
        return Ok(LrtResult { stat: 0.0, df: 0, p: 1.0 });
    }
    let raw = 2.0 * (full.log_likelihood - reduced.log_likelihood);
    if raw < -1e-6 {
        return Err(HteError::Domain(format!(
            "negative likelihood-ratio statistic {raw}; the models are not nested"
        )));
    }
    let stat = raw.max(0.0);
    Ok(LrtResult { stat, df, p: chisq_sf(stat, df)? })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InteractionTest {
    pub name: String,
    pub estimate: f64,
    pub std_error: f64,
    pub wald_z: f64,
    pub raw_p: f64,
    pub holm_p: f64,
}

/// Wald tests for the named interactions, all read off one jointly fitted
/// full interaction model, with Holm adjustment across the named family.
pub fn wald_interactions(data: &TrialDataset, prespecified: &[String]) -> Result<Vec<InteractionTest>> {
    for name in prespecified {
        data.column_index(name)?;
    }
    let full = fit_full(data)?;
    wald_from_fit(data, &full, prespecified)
}

pub fn wald_from_fit(data: &TrialDataset, full: &GlmFit, prespecified: &[String]) -> Result<Vec<InteractionTest>> {
    let mut tests = Vec::with_capacity(prespecified.len());
    for name in prespecified {
        data.column_index(name)?;
        let term = interaction_name(data.treatment_name(), name);
        let j = full
            .names
            .iter()
            .position(|n| *n == term)
            .ok_or_else(|| HteError::Schema(format!("interaction term `{term}` not in the model")))?;
        let estimate = full.coefficients[j];
        let std_error = full.std_error(j);
        let wald_z = estimate / std_error;
        tests.push(InteractionTest {
            name: name.clone(),
            estimate,
            std_error,
            wald_z,
            raw_p: two_sided_p(wald_z),
            holm_p: f64::NAN,
        });
    }
    let raw: Vec<f64> = tests.iter().map(|t| t.raw_p).collect();
    for (t, p) in tests.iter_mut().zip(adjust_holm(&raw)?) {
        t.holm_p = p;
    }
    Ok(tests)
}

/// Both tests from a single pair of fits.
pub fn interaction_tests(data: &TrialDataset, prespecified: &[String]) -> Result<(LrtResult, Vec<InteractionTest>)> {
    for name in prespecified {
        data.column_index(name)?;
    }
    if data.p() == 0 {
        return Ok((LrtResult { stat: 0.0, df: 0, p: 1.0 }, Vec::new()));
    }
    let reduced = fit_logistic(&treatment_design(data, false)?, data.outcome()).context("reduced (main-effects) model")?;
    let full = fit_full(data)?;
    let lrt = lrt_from_fits(&reduced, &full)?;
    let wald = wald_from_fit(data, &full, prespecified)?;
    Ok((lrt, wald))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simgen::{generate_trial, Scenario, ScenarioSpec};

    #[test]
    fn no_covariates_gives_trivial_lrt() {
        let d = TrialDataset::new(vec![], vec![], vec![0, 1, 0, 1], vec![1, 0, 0, 1]).unwrap();
        assert_eq!(lrt_omnibus(&d).unwrap(), LrtResult { stat: 0.0, df: 0, p: 1.0 });
    }

    #[test]
    fn strong_scenario_rejects() {
        let (d, _) = generate_trial(&ScenarioSpec::preset(Scenario::StrongHte), 2024).unwrap();
        let lrt = lrt_omnibus(&d).unwrap();
        assert_eq!(lrt.df, 3);
        assert!(lrt.p < 0.05, "{lrt:?}");
    }

    #[test]
    fn constant_covariate_is_degenerate() {
        let d = TrialDataset::new(
            vec!["x".into(), "zero".into()],
            vec![vec![0.1, 0.5, -0.3, 0.9, 1.2, -0.7], vec![0.0; 6]],
            vec![0, 1, 0, 1, 0, 1],
            vec![1, 0, 0, 1, 1, 0],
        )
        .unwrap();
        assert!(matches!(wald_interactions(&d, &["x".into()]), Err(HteError::DegenerateColumn(c)) if c == "zero"));
    }

    #[test]
    fn unknown_prespecified_name() {
        let (d, _) = generate_trial(&ScenarioSpec::preset(Scenario::NoHte).with_n(200), 1).unwrap();
        assert!(matches!(wald_interactions(&d, &["x9".into()]), Err(HteError::Schema(_))));
    }

    #[test]
    fn joint_tests_match_separate_calls() {
        let (d, _) = generate_trial(&ScenarioSpec::preset(Scenario::WeakHte).with_n(500), 9).unwrap();
        let names: Vec<String> = vec!["x1".into(), "x3".into()];
        let (lrt, wald) = interaction_tests(&d, &names).unwrap();
        assert_eq!(lrt, lrt_omnibus(&d).unwrap());
        assert_eq!(wald, wald_interactions(&d, &names).unwrap());
        for t in &wald {
            assert!(t.holm_p >= t.raw_p);
        }
    }
}
