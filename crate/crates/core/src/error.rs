use std::io;

use thiserror::Error;

/// Errors produced by the summarization, decoding and classification code.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid vocabulary: {0}")]
    Vocabulary(String),

    #[error("invalid posterior grid: {0}")]
    Grid(String),

    #[error("label {label} out of range for vocabulary of size {size}")]
    LabelOutOfRange { label: usize, size: usize },

    #[error("target contains the blank label at position {0}")]
    BlankInTarget(usize),

    #[error("instance too large for exhaustive enumeration: {0}")]
    TooLarge(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("model/mode mismatch: {0}")]
    Mode(String),

    #[error("malformed {kind} file: {reason}")]
    Format { kind: &'static str, reason: String },

    #[error("missing prediction for utterance {0}")]
    MissingId(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
