use alloc::string::String;

/// Errors raised by the core algorithms.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid value for {name}: {reason}")]
    InvalidValue { name: &'static str, reason: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("word not in vocabulary: {0}")]
    UnknownWord(String),
    #[error("zero-norm vector")]
    ZeroNorm,
    #[error("linear system is singular or not positive definite")]
    Singular,
    #[error("non-finite parameter after training epoch {epoch}")]
    NonFinite { epoch: usize },
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidValue {
        name,
        reason: reason.into(),
    }
}
