//! Stage 2 effect estimation: honest forests, cross-fitted nuisances,
//! pseudo-outcomes and CATE learners.

pub mod forest;
pub mod learners;
pub mod nuisance;
pub mod pseudo;

pub use forest::{CausalForest, FeatureMatrix, ForestSpec, RegressionForest, Tree};
pub use learners::{fit_causal_forest, fit_learner, fit_meta_learner, x_combine, CateModel, FoldModel, LearnerKind, LearnerSummary};
pub use nuisance::{
    fit_nuisance, fit_outcomes, fit_propensity, NuisanceEstimates, OutcomeModels, PropensityFit, PropensityMode,
    PropensityModel, DEFAULT_CLIP,
};
pub use pseudo::{pseudo_dr, pseudo_ipw, Flavor, PseudoOutcomes};
