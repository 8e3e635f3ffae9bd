//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A dataset line failed to parse or validate.
    #[error("ingest error at line {line}: {message}")]
    Ingest { line: usize, message: String },

    /// A configuration value is missing, malformed, or out of range.
    #[error("config error: {0}")]
    Config(String),

    /// A tensor or vocabulary dimension is invalid for the requested operation.
    #[error("shape error: {0}")]
    Shape(String),

    /// An operation received empty input where at least one element is required.
    #[error("empty input: {0}")]
    Empty(String),

    /// Training could not proceed (non-finite values, exhausted age cap, ...).
    #[error("training error: {0}")]
    Train(String),

    /// Decoding could not proceed.
    #[error("decode error: {0}")]
    Decode(String),

    /// Evaluation inputs were inconsistent.
    #[error("metrics error: {0}")]
    Metrics(String),

    /// A checkpoint file was malformed or incompatible.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    /// An input or output file could not be used; carries the offending path.
    #[error("{path}: {source}")]
    File {
        path: String,
        source: std::io::Error,
    },
}

impl Error {
    pub fn file(path: &std::path::Path, source: std::io::Error) -> Error {
        Error::File {
            path: path.display().to_string(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
