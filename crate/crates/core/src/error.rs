use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid argument `{arg}`: {reason}")]
    InvalidArgument { arg: &'static str, reason: String },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("label {label} out of range for {n} classes")]
    Label { label: usize, n: usize },

    #[error("class {class} has {available} examples, {requested} requested")]
    InsufficientExamples {
        class: usize,
        available: usize,
        requested: usize,
    },

    #[error("class {0} has no examples")]
    EmptyClass(usize),

    #[error("{0} is not supported here")]
    Unsupported(String),

    #[error("training diverged at epoch {epoch}, step {step}: loss = {loss}")]
    Diverged {
        epoch: usize,
        step: usize,
        loss: f64,
    },
}

impl Error {
    pub(crate) fn invalid(arg: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidArgument {
            arg,
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
