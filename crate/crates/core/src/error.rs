use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("embedding dimension mismatch: {a} vs {b}")]
    DimMismatch { a: usize, b: usize },

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("image carries no latent codes: {0}")]
    MissingLatents(String),

    #[error("mask sampling failed: {0}")]
    MaskGeometry(String),

    #[error("metric error: {0}")]
    Metric(String),

    #[error("training aborted: {0}")]
    TrainingAborted(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serialization(String),
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serialization(e.to_string())
    }
}
