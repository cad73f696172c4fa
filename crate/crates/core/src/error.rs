//! Error taxonomy shared by every module. Variants map onto the CLI exit
//! codes: numeric failures are distinguished from data/format failures so
//! scripts can tell a diverging run from a bad input file.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid ModelSpec or plan arithmetic; message names the offending field.
    #[error("plan: {0}")]
    Plan(String),
    /// Malformed or unreadable configuration.
    #[error("config: {0}")]
    Config(String),
    /// Tensor or vector dimensions disagree.
    #[error("shape: {0}")]
    Shape(String),
    /// Bad input data (token ids, documents, manifests).
    #[error("data: {0}")]
    Data(String),
    /// Sequence budget exceeded: overlong input or full KV cache.
    #[error("context: {0}")]
    Context(String),
    /// Schedule query outside the configured step range.
    #[error("schedule: {0}")]
    Schedule(String),
    /// Checkpoint file violates the on-disk format.
    #[error("format: {0}")]
    Format(String),
    /// Non-finite values where finite ones are required.
    #[error("numeric: {0}")]
    Numeric(String),
    /// Benchmark protocol does not fit the model.
    #[error("protocol: {0}")]
    Protocol(String),
    /// A data source ran out of surviving documents.
    #[error("source exhausted: {0}")]
    Exhausted(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code for this failure class: 2 for data/format problems,
    /// 3 for numeric ones. Usage errors (exit 1) never reach this type.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numeric(_) => 3,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
