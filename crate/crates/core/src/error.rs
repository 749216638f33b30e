use thiserror::Error;

use crate::lp::LpError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// The safety half-space `{p in simplex : p'v <= g}` is empty.
    #[error("empty half-space: threshold {threshold} is below min(v) = {min_value}")]
    EmptyHalfspace { threshold: f64, min_value: f64 },

    #[error("solver failed: {0}")]
    Solver(String),

    #[error("linear program: {0}")]
    Lp(#[from] LpError),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Whether the inputs were fine and the computation itself failed.
    pub fn is_solver_failure(&self) -> bool {
        matches!(self, Error::Solver(_) | Error::EmptyHalfspace { .. } | Error::Lp(_))
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }
}
