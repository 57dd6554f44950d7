use alloc::string::String;

/// Errors raised by the core algorithms.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("insufficient samples: need at least {needed}, got {got}")]
    InsufficientSamples { needed: usize, got: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("divergence: non-finite loss at epoch {epoch}")]
    Divergence { epoch: usize },
    #[error("unknown family `{0}` (valid families: checker, notch, quant)")]
    UnknownFamily(String),
    #[error("model is untrained: {0}")]
    Untrained(&'static str),
    #[error("chain op {index} ({kind}): {message}")]
    ChainOp {
        index: usize,
        kind: &'static str,
        message: String,
    },
    #[error("manifest parse error at byte {offset}: expected {expected}")]
    Parse { offset: usize, expected: String },
    #[error("undefined metric: {0}")]
    UndefinedMetric(&'static str),
}

pub type Result<T> = core::result::Result<T, Error>;
