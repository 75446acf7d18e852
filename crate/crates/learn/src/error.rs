use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LearnError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid action: {0}")]
    InvalidAction(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("insufficient data: have {have}, need {need}")]
    InsufficientData { have: usize, need: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("missing or malformed parameter array: {0}")]
    Snapshot(String),
}

pub type Result<T> = std::result::Result<T, LearnError>;
