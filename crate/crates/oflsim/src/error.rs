use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// A runtime self-check failed. This signals an implementation bug or a
    /// corrupted artifact, never an expected condition.
    #[error("invariant violated [{check}]: {detail}")]
    InvariantViolation { check: String, detail: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("correlated mechanism requires a factorization")]
    MissingFactorization,

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    pub fn invariant(check: &str, detail: impl Into<String>) -> Self {
        Error::InvariantViolation {
            check: check.to_string(),
            detail: detail.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
