use alloc::string::String;
use alloc::vec::Vec;

/// Errors raised by the core pipeline.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("validation failed for {id}: {reason}")]
    Validation { id: String, reason: String },
    #[error("{kind} not found: {id}")]
    NotFound { kind: &'static str, id: String },
    #[error("token id {id} out of vocabulary of size {vocab_size}")]
    OutOfVocab { id: u32, vocab_size: usize },
    #[error("shape mismatch in {context}: expected {expected:?}, got {got:?}")]
    Shape { context: String, expected: (usize, usize), got: (usize, usize) },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("option index {index} out of range for {count} options")]
    OptionOutOfRange { index: usize, count: usize },
    #[error("wrong question kind for {solver}: {question_id}")]
    WrongKind { solver: &'static str, question_id: String },
    #[error("parameter mismatch: {}", .0.join("; "))]
    ParamMismatch(Vec<String>),
    #[error("calibration error: {0}")]
    Calibration(String),
    #[error("missing scores: {}", .0.join(", "))]
    MissingScores(Vec<String>),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
