//! Randomization-based regression adjustment for the sample average
//! treatment effect in completely randomized experiments with many
//! covariates.
//!
//! Potential outcomes and covariates are treated as fixed; the only source
//! of randomness is the assignment of `n1` of `n` units to treatment. The
//! crate provides:
//!
//! - [`finitepop`]: empirical and matrix-weighted ("scaled") moments.
//! - [`design`]: the hat matrix and its derived matrices, plus assignment
//!   sampling and exhaustive enumeration.
//! - [`estimators`]: difference in means, pooled-covariance regression
//!   adjustment, its leverage-debiased version, and the arm-wise OLS
//!   competitors.
//! - [`inference`]: oracle variances, the plug-in variance estimators, HC3
//!   and Wald intervals.
//! - [`dgp`]: seeded simulation populations.
//! - [`harness`]: the Monte Carlo engine and factorial runner.
//! - [`verify`]: identity and statistical self-checks.
//!
//! Monte Carlo loops run on rayon when the `parallel` feature is enabled
//! (the default) and fall back to a sequential loop otherwise. Results are
//! identical either way.

// `!(x >= t)` is used on purpose so that NaN fails the guard too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod design;
pub mod dgp;
pub mod error;
pub mod estimators;
pub mod finitepop;
pub mod harness;
pub mod inference;
pub mod rng;
pub mod verify;

mod exec;

pub use error::{Error, Result};
pub use exec::Execution;

pub use design::{
    build_hat_structure, complete_randomization, enumerate_assignments, Arm, Assignment,
    CovariateMatrix, HatStructure,
};
pub use estimators::{ObservedData, ScienceTable};
