use alloc::string::String;

/// Errors raised by the core library.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("cannot evaluate on an empty batch")]
    EmptyEvaluation,

    #[error("empty batch where a nonempty one is required ({context})")]
    EmptyBatch { context: &'static str },

    #[error("insufficient data for {context}: have {available}, need {needed}")]
    InsufficientData {
        context: &'static str,
        available: usize,
        needed: usize,
    },

    #[error("{what} = {value} is outside {range}")]
    OutOfRange {
        what: &'static str,
        value: f64,
        range: &'static str,
    },

    #[error("strategy index {index} out of range for {n_strategies} strategies")]
    StrategyOutOfRange { index: usize, n_strategies: usize },

    #[error("label {0} is not binary")]
    InvalidLabel(u8),

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("invalid configuration at `{path}`: {reason}")]
    InvalidConfig { path: String, reason: String },

    #[error("no records to analyse")]
    EmptyRecords,
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

impl Error {
    pub(crate) fn config(path: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidConfig {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
