//! Stage 2 evaluation: uplift curves, DR policy values, harm-constrained
//! threshold selection and bootstrap uncertainty.

pub mod bootstrap;
pub mod np;
pub mod uplift;
pub mod value;

pub use bootstrap::{bootstrap_se, BootstrapResult};
pub use np::{np_frontier, wilson_upper, NpChoice, NpFrontier, NpOptions, NpStatus};
pub use uplift::{auqc, rank_descending, uplift_curve, Convention, UpliftCurve};
pub use value::{policy_value, select_threshold, threshold_grid, value_curve, value_curve_se, value_terms, PolicyValueCurve};
