use thiserror::Error;

/// Errors produced by the library surface.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum AbftError {
    #[error("invalid layer: {0}")]
    InvalidLayer(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("integer overflow in exact-int arithmetic")]
    Overflow,
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("invalid tiling: {0}")]
    InvalidTiling(String),
    #[error("invalid fault: {0}")]
    InvalidFault(String),
    #[error("validation error: {0}")]
    Validation(String),
}

pub type Result<T, E = AbftError> = std::result::Result<T, E>;
