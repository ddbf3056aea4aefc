use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("empty scene: nothing to render")]
    EmptyScene,
    #[error("stale forward cache: scene was modified after the forward pass")]
    StaleCache,
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("unsupported operation: {0}")]
    Unsupported(String),
    #[error("no registered features for this image")]
    UnregisteredImage,
    #[error("invalid input: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, Error>;
