use std::path::PathBuf;

/// Errors surfaced by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("unknown item `{0}`")]
    UnknownItem(String),

    #[error("tech tree validation failed: {0}")]
    Validation(String),

    #[error("{path}:{line}: malformed record: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}:{line}: corrupted record: {message}")]
    Corruption {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("memory bank is empty; no seed task available")]
    NoSeed,

    #[error("inconsistent state: {0}")]
    Consistency(String),

    #[error("external policy: {0}")]
    External(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
