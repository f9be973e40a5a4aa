use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("problem too large: {0}")]
    SizeLimit(String),

    #[error("infeasible routing problem: {0}")]
    Infeasible(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("rejected action: {0}")]
    RejectedAction(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("numeric fault: {0}")]
    Numeric(String),
}

pub type Result<T> = std::result::Result<T, Error>;
