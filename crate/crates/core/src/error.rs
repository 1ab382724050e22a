use thiserror::Error;

/// Errors raised by objectives, optimizers and estimators.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid specification: {0}")]
    InvalidSpec(String),

    #[error("label {label} is not one of the verbalizer ids")]
    InvalidLabel { label: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("unsupported mode: {0}")]
    UnsupportedMode(String),

    #[error("dimension {n} exceeds the CMA-ES guard of {limit}; use an ID-aware ES for large problems")]
    DimensionGuard { n: usize, limit: usize },

    #[error("degenerate study: {0}")]
    DegenerateStudy(String),

    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },

    #[error("remote configuration error: {0}")]
    RemoteConfig(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
