use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("empty input vector")]
    Empty,

    #[error("need at least {needed} values, got {got}")]
    TooFew { needed: usize, got: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite value at position {0}")]
    NonFinite(usize),

    #[error("input has zero spread; cannot standardize")]
    ZeroSpread,

    #[error(
        "covariance of centered covariates is singular: eigenvalue ratio {ratio:e} is below {threshold:e}"
    )]
    Singular { ratio: f64, threshold: f64 },

    #[error("{arm} arm regression is singular: {reason}")]
    ArmSingular {
        arm: crate::design::Arm,
        reason: String,
    },

    #[error("unit {unit} in the {arm} arm has leverage {leverage} (too close to 1)")]
    LeverageAtOne {
        arm: crate::design::Arm,
        unit: usize,
        leverage: f64,
    },

    #[error("invalid assignment: {0}")]
    InvalidAssignment(String),

    #[error("enumeration would produce {count} assignments (limit {limit})")]
    EnumerationTooLarge { count: u128, limit: u128 },

    #[error("worst-case residual is degenerate (constant leverages); use t residuals instead")]
    DegenerateWorstCase,

    #[error("negative variance {0}")]
    NegativeVariance(f64),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}
