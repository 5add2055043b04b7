//! Two-stage heterogeneous treatment effect analysis for randomized trials
//! with a binary outcome.
//!
//! Stage 1 tests for effect modification at the population level (omnibus
//! likelihood-ratio test, Holm-adjusted Wald tests of prespecified
//! interactions, STEPP) and decides whether to go on. Stage 2 learns
//! individualized scores with cross-fitted forests and evaluates threshold
//! policies with doubly robust pseudo-outcomes, including a harm-constrained
//! threshold rule.

pub mod cate;
pub mod dataset;
pub mod error;
pub mod policy;
pub mod seed;
mod serde_float;
pub mod simgen;
pub mod stage1;
pub mod stats;
pub mod workflow;

pub use cate::{CateModel, ForestSpec, LearnerKind, NuisanceEstimates, PropensityMode, PseudoOutcomes};
pub use dataset::{ColumnKind, ColumnSchema, FoldAssignment, TrialDataset};
pub use error::{HteError, Result};
pub use policy::{NpFrontier, NpStatus, PolicyValueCurve, UpliftCurve};
pub use simgen::{Scenario, ScenarioSpec};
pub use stage1::{GateAlphas, GateDecision, Stage1Report, SteppCurve};
pub use workflow::{StudySummary, WorkflowConfig, WorkflowReport};
