use thiserror::Error;

use crate::qp::QpSolution;

pub type Result<T, E = LabError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum LabError {
    /// A point sits where a map or kernel is undefined (inversion centre, atom at y).
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    /// Kernel matrix assembly refused the node set.
    #[error("assembly error: {0}")]
    Assembly(String),
    #[error("matrix is not positive definite (pivot {pivot:e} at index {index})")]
    NotPositiveDefinite { index: usize, pivot: f64 },
    #[error("QP solver did not converge after {iterations} iterations")]
    Convergence {
        iterations: usize,
        best: Box<QpSolution>,
    },
    #[error("inconsistent inputs: {0}")]
    Mismatch(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    /// `line` is 1-based; 0 when no line applies.
    #[error("{}", located(*.line, .message))]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl LabError {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        LabError::Parameter(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        LabError::Domain(msg.into())
    }
}

fn located(line: usize, message: &str) -> String {
    if line == 0 {
        message.to_string()
    } else {
        format!("line {line}: {message}")
    }
}
