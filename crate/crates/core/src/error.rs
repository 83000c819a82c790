use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("rejected input: {0}")]
    InvalidInput(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("non-finite values in segment `{segment}`")]
    NonFinite { segment: String },

    #[error("non-finite loss at step {step} (batch digest {batch_digest})")]
    NonFiniteLoss { step: u64, batch_digest: String },

    #[error("memory is full (capacity {capacity})")]
    CapacityExceeded { capacity: usize },

    #[error("memory is empty; retrieval unavailable")]
    RetrievalUnavailable,

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for the error kinds that indicate a numerical failure.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::NonFinite { .. } | Error::NonFiniteLoss { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
