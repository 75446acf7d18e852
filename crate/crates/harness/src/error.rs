use thiserror::Error;

use dogfight_core::SimError;
use dogfight_learn::LearnError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("runtime error: {0}")]
    Runtime(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("integrity error at byte {offset}: {reason}")]
    Integrity { offset: u64, reason: String },
    #[error("checkpoint refused: {0}")]
    Mismatch(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl HarnessError {
    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 1,
            HarnessError::Runtime(_) | HarnessError::Numeric(_) | HarnessError::Io(_) => 2,
            HarnessError::Integrity { .. } | HarnessError::Mismatch(_) => 3,
        }
    }
}

impl From<SimError> for HarnessError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::InvalidConfig(msg) => HarnessError::Config(msg),
            other => HarnessError::Runtime(other.to_string()),
        }
    }
}

impl From<LearnError> for HarnessError {
    fn from(e: LearnError) -> Self {
        match e {
            LearnError::InvalidConfig(msg) => HarnessError::Config(msg),
            LearnError::NonFinite(msg) => HarnessError::Numeric(msg),
            LearnError::Snapshot(msg) => HarnessError::Mismatch(msg),
            other => HarnessError::Runtime(other.to_string()),
        }
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;
