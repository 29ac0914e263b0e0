//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A scalar quantized outside its codebook, or a token id outside its spec.
    #[error("value {value} quantizes to {id}, outside the codebook [0, {num_tokens})")]
    OutOfRange { value: f64, id: i64, num_tokens: u32 },

    /// A token stream violates the frame grammar; `position` is the offending
    /// index into the stream being parsed.
    #[error("malformed frame at token {position}: {reason}")]
    MalformedFrame { position: usize, reason: String },

    #[error("cannot build a vocabulary from an empty corpus")]
    EmptyCorpus,

    #[error("vocabulary needs {words} word ids but the text segment holds {capacity}")]
    VocabOverflow { words: usize, capacity: usize },

    #[error("{distinct} distinct patches cannot seed a codebook of {requested} entries")]
    InsufficientPatches { distinct: usize, requested: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("sequence of {len} tokens exceeds the context length {context}")]
    ContextOverflow { len: usize, context: usize },

    #[error("modality schedule violation: {0}")]
    ScheduleViolation(String),

    #[error("non-finite loss at step {step}; state left untouched")]
    NonFiniteLoss { step: u64 },

    #[error("horizon of {horizon} keyframes unavailable: trajectory covers {available}")]
    HorizonUnavailable { horizon: usize, available: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("corrupt file {path}: {reason}")]
    CorruptFile { path: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code for the CLI: 2 validation, 4 numeric failure, 3 runtime.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::NonFiniteLoss { .. } => 4,
            _ => 3,
        }
    }
}
