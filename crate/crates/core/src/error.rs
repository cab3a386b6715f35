use thiserror::Error;

/// Failures raised by belief propagation, planning and execution.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: {context} (expected {expected}, got {actual})")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("matrix is not positive semidefinite in {0}")]
    NotPsd(&'static str),

    #[error("innovation covariance is singular")]
    SingularInnovation,

    #[error("constraint gradient vanishes (norm {0:e})")]
    VanishingGradient(f64),

    #[error("truncated side holds no probability mass")]
    EmptyTruncation,

    #[error("time index {index} out of range (policy has {len} steps)")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("operation not supported by this domain: {0}")]
    Unsupported(&'static str),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
