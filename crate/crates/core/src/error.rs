use thiserror::Error;

/// Errors produced by the scheduler and simulator.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("rearrangement is not a bijection: {0}")]
    BijectionViolation(String),

    #[error("padding mode mismatch: cost model is {model:?}, batch is {batch:?}")]
    ModeMismatch {
        model: crate::types::PaddingMode,
        batch: crate::types::PaddingMode,
    },

    #[error("instance too large for exhaustive search: {0}")]
    SizeCap(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
