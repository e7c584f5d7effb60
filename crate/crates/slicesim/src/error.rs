use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("estimator domain error: {0}")]
    EstimatorDomain(String),

    #[error("parameter error: {0}")]
    Parameter(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("undefined latency: {0}")]
    UndefinedLatency(String),

    #[error("proposal parse error: {0}")]
    ProposalParse(String),

    #[error("replay exhausted: {0}")]
    ReplayExhausted(String),

    #[error("remote proposer error: {0}")]
    Remote(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
