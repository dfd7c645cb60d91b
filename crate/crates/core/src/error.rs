use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("model construction failed: {0}")]
    ModelConstruction(String),
    #[error("degenerate state: {0}")]
    DegenerateState(String),
    #[error("numerical consistency violated: {0}")]
    NumericalConsistency(String),
    #[error("capacity exceeded: {0}")]
    Capacity(String),
    #[error("conditional expectation undefined: {0}")]
    UndefinedConditional(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
