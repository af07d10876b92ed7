use thiserror::Error;

/// Crate-wide error type. Variants mirror the pipeline stage that failed;
/// messages name the violated precondition or invariant.
#[derive(Debug, Error)]
pub enum Error {
    #[error("geometry: {0}")]
    Geometry(String),
    #[error("augment: {0}")]
    Augment(String),
    #[error("graph: {0}")]
    Graph(String),
    #[error("hemo: {0}")]
    Hemo(String),
    #[error("loss: {0}")]
    Loss(String),
    #[error("nn: {0}")]
    Nn(String),
    #[error("metrics: {0}")]
    Metrics(String),
    #[error("format: {0}")]
    Format(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
