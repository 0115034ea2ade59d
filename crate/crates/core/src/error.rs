use thiserror::Error;

/// Errors raised by the core algorithms.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("range {start}..{end} is outside a sequence of {len} frames")]
    OutOfRange { start: usize, end: usize, len: usize },
    #[error("sequence too short: {frames} frames, need at least {min}")]
    TooShort { frames: usize, min: usize },
    #[error("active device set is empty")]
    EmptyActiveSet,
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error("tokenizer has not been trained")]
    UntrainedTokenizer,
    #[error("token id {id} is outside vocabulary of size {vocab}")]
    InvalidToken { id: usize, vocab: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite values in {0}")]
    NonFinite(String),
    #[error("{what} budget of {budget} exceeded")]
    BudgetExceeded { what: &'static str, budget: usize },
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("corpus needs at least 2 samples, got {0}")]
    CorpusTooSmall(usize),
    #[error("unknown object class {0}")]
    UnknownClass(usize),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
