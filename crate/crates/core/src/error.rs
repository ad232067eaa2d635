use thiserror::Error;

/// Errors raised by the estimator, its diagnostics and the simulator.
///
/// Time indices carried by variants are 1-based, matching the external
/// file formats.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum GfglError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("matrix at t={t} is not positive definite")]
    NotPositiveDefinite { t: usize },

    #[error("matrix at t={t} is singular")]
    Singular { t: usize },

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("numerical failure at iteration {iteration}: {reason}")]
    NumericalFailure { iteration: usize, reason: String },

    #[error("objective appears unbounded below (iterates diverged at iteration {iteration})")]
    UnboundedObjective { iteration: usize },

    #[error("simulation failed: {0}")]
    Simulation(String),
}

pub type Result<T> = std::result::Result<T, GfglError>;
