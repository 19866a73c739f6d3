//! Identification-robust conditional inference for moment-condition models.
//!
//! The observed process `g(theta)` is split into the conditioning process
//! `h(theta)` and the null value `g(theta_0)`; critical values for any
//! statistic of the whole path are simulated conditional on `h`.

pub mod concentrate;
pub mod condcrit;
pub mod covest;
pub mod error;
pub mod field;
pub mod gmm;
pub mod grid;
pub mod inference;
pub mod linalg;
pub mod montecarlo;
pub mod process;
pub mod quantile_iv;
pub mod result;
pub mod stats;

pub use condcrit::{
    compute_h, conditional_critical_value, conditional_test, draw_xi, invert_test,
    simulate_g_star, HProcess, StatisticFunctional, TestOptions,
};
pub use error::{Error, Result};
pub use field::{validate_field, CovarianceField};
pub use grid::ParamGrid;
pub use process::{MeanFunction, MomentProcess};
pub use result::{ConfidenceSet, TestResult};
pub use stats::StatKind;
