//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("covariance operator is singular")]
    SingularCovariance,
    #[error("matrix is not symmetric positive definite")]
    NotSpd,
    #[error("operation requires a linear PtO map")]
    NotLinear,
    #[error("operation requires a materialized dense PtO map")]
    NoDenseMap,
    #[error("linear solver did not converge after {iterations} iterations (residual {residual:.3e})")]
    SolverDiverged { iterations: usize, residual: f64 },
    #[error("line search failed after {0} backtracks")]
    LineSearchFailed(usize),
    #[error("singular innovation system (observation-space solve failed)")]
    SingularGain,
    #[error("sample budget exceeded: {requested} inner solves, budget {budget}")]
    BudgetExceeded { requested: usize, budget: usize },
    #[error("NaN encountered in {0}")]
    NanEncountered(&'static str),
    #[error("forward solve failed: {0}")]
    ForwardSolveFailed(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
