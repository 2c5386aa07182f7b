use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = NtkError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum NtkError {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    Dimension {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("eigensolver did not converge for a {dim}x{dim} matrix")]
    EigenFailure { dim: usize },

    #[error("matrix is not positive definite: pivot {index} is {value:e}")]
    NotPositiveDefinite { index: usize, value: f64 },

    #[error("power iteration did not converge for eigenpair {index} (last residual {residual:e})")]
    Convergence { index: usize, residual: f64 },

    #[error("training diverged at step {step}: non-finite parameters")]
    Divergence { step: usize },

    #[error("kernel gradient descent became unstable at step {step} (dt = {dt}, dt*lambda_max = {dt_lambda_max})")]
    Unstable {
        step: usize,
        dt: f64,
        dt_lambda_max: f64,
    },

    #[error("bad IDX magic in {path}: expected {expected:#010x}, found {found:#010x}")]
    IdxMagic {
        path: PathBuf,
        expected: u32,
        found: u32,
    },

    #[error("truncated IDX payload in {path}: expected {expected} bytes, found {found}")]
    IdxLength {
        path: PathBuf,
        expected: usize,
        found: usize,
    },

    #[error("IDX files disagree: {0}")]
    IdxConsistency(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl NtkError {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        NtkError::Argument(msg.into())
    }
}
