//! Stage 1: population-level heterogeneity inference and the gate.

pub mod dist;
pub mod gate;
pub mod glm;
pub mod interaction;
pub mod multiplicity;
pub mod stepp;

use serde::Serialize;

pub use dist::{chisq_sf, normal_quantile, normal_sf, two_sided_p};
pub use gate::{gate_decision, gate_decision_split, GateAlphas, GateDecision, GateReason};
pub use glm::{fit_logistic, Design, GlmFit};
pub use interaction::{interaction_tests, lrt_omnibus, wald_interactions, InteractionTest, LrtResult};
pub use multiplicity::{adjust_bh, adjust_holm};
pub use stepp::{stepp_band, stepp_curve, SteppBand, SteppCurve};

use crate::dataset::TrialDataset;
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Stage1Report {
    pub lrt_stat: f64,
    pub lrt_df: usize,
    pub lrt_p: f64,
    pub interactions: Vec<InteractionTest>,
    /// Overall level: the shared alpha, or the sum of a split allocation.
    pub alpha: f64,
    pub alphas: GateAlphas,
    pub proceed: bool,
    pub reasons: Vec<GateReason>,
    /// The subgroup-existence criterion has no test procedure here.
    pub criterion_ii: &'static str,
}

pub const CRITERION_II_STATUS: &str = "not evaluated";

/// LRT, Holm-adjusted Wald tests on the prespecified terms, and the gate.
pub fn run_stage1(data: &TrialDataset, prespecified: &[String], alphas: GateAlphas) -> Result<Stage1Report> {
    let (lrt, interactions) = interaction_tests(data, prespecified)?;
    let gate = gate_decision_split(&lrt, &interactions, alphas)?;
    Ok(Stage1Report {
        lrt_stat: lrt.stat,
        lrt_df: lrt.df,
        lrt_p: lrt.p,
        interactions,
        alpha: if alphas.omnibus == alphas.interactions {
            alphas.omnibus
        } else {
            alphas.omnibus + alphas.interactions
        },
        alphas,
        proceed: gate.proceed,
        reasons: gate.reasons,
        criterion_ii: CRITERION_II_STATUS,
    })
}

impl Stage1Report {
    pub fn lrt(&self) -> LrtResult {
        LrtResult {
            stat: self.lrt_stat,
            df: self.lrt_df,
            p: self.lrt_p,
        }
    }

    pub fn gate(&self) -> GateDecision {
        GateDecision {
            proceed: self.proceed,
            reasons: self.reasons.clone(),
        }
    }
}
