use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected:?}, got {actual:?}")]
    Shape {
        context: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("length mismatch in {context}: expected {expected}, got {actual}")]
    Length {
        context: String,
        expected: usize,
        actual: usize,
    },

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("backward called on {0} without a prior forward pass")]
    MissingCache(String),

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("circuit error: {0}")]
    Circuit(String),

    #[error("partition error: {0}")]
    Partition(String),

    #[error("data generation failed: {0}")]
    Generation(String),

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error(transparent)]
    Codec(#[from] crate::fed::codec::CodecError),

    #[error("transport error: {0}")]
    Transport(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn shape(context: impl Into<String>, expected: &[usize], actual: &[usize]) -> Self {
        Error::Shape {
            context: context.into(),
            expected: expected.to_vec(),
            actual: actual.to_vec(),
        }
    }

    pub(crate) fn length(context: impl Into<String>, expected: usize, actual: usize) -> Self {
        Error::Length {
            context: context.into(),
            expected,
            actual,
        }
    }
}
