use std::io;

use thiserror::Error;

use crate::forward::Domain;

pub type Result<T> = std::result::Result<T, PactError>;

#[derive(Debug, Error)]
pub enum PactError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("domain mismatch: expected {expected}, found {found}")]
    DomainMismatch { expected: Domain, found: Domain },

    #[error("verification failed: {0}")]
    Verification(String),

    #[error("malformed input: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl PactError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        PactError::InvalidArgument(msg.into())
    }

    pub(crate) fn dims(msg: impl Into<String>) -> Self {
        PactError::DimensionMismatch(msg.into())
    }
}
