//! Error taxonomy shared across the crate. Variants map onto the CLI exit
//! codes, so every fallible operation classifies its failure up front.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CsnnError {
    /// Invalid configuration or parameters (CLI exit code 2).
    #[error("config error: {0}")]
    Config(String),
    /// Missing or malformed dataset input (CLI exit code 3).
    #[error("data error: {0}")]
    Data(String),
    /// Non-finite state encountered during simulation (CLI exit code 4).
    #[error("numeric fault: {0}")]
    Numeric(String),
    /// Snapshot unreadable or inconsistent with the requested network (CLI exit code 5).
    #[error("snapshot error: {0}")]
    Snapshot(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CsnnError>;

impl CsnnError {
    pub fn config(msg: impl Into<String>) -> Self {
        CsnnError::Config(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        CsnnError::Data(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        CsnnError::Numeric(msg.into())
    }

    pub fn snapshot(msg: impl Into<String>) -> Self {
        CsnnError::Snapshot(msg.into())
    }

    /// Process exit code for the CLI; 1 is reserved for uncategorized I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            CsnnError::Config(_) => 2,
            CsnnError::Data(_) => 3,
            CsnnError::Numeric(_) => 4,
            CsnnError::Snapshot(_) => 5,
            CsnnError::Io(_) => 1,
        }
    }
}
