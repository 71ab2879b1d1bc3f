use thiserror::Error;

/// Errors produced by the laboratory.
#[derive(Debug, Error)]
pub enum Error {
    #[error("index {index} out of range for dataset of size {n}")]
    IndexOutOfRange { index: usize, n: usize },

    #[error("dimension mismatch: {what} (expected {expected}, got {got})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("MLE failed: {0}")]
    MleFailure(String),

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("rank-deficient control-variate Jacobian: statistic {statistic} is linearly dependent on the others")]
    RankDeficient { statistic: usize },

    #[error("retraction rejected: {0}")]
    RetractionRejected(String),

    #[error("quadrature did not converge: last estimates {previous} and {last}")]
    QuadratureNonConvergence { previous: f64, last: f64 },

    #[error("eigensolver failed: {0}")]
    Eigen(String),

    #[error("bound violation at datum {index}: log lower bound {log_bound} exceeds log likelihood {log_lik}")]
    BoundViolation {
        index: usize,
        log_bound: f64,
        log_lik: f64,
    },

    #[error("batch growth exceeded {max_batches} batches")]
    BatchLimit { max_batches: usize },

    #[error("{0}")]
    Unsupported(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
