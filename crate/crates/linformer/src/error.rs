use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LabError {
    /// Tensor or dataset dimensions do not line up.
    #[error("shape mismatch: {0}")]
    Shape(String),
    /// Bad configuration key, value, or CLI usage.
    #[error("config error: {0}")]
    Config(String),
    /// Malformed or insufficient data (files, datasets, covariance input).
    #[error("data error: {0}")]
    Data(String),
    /// Numeric failure: singular system, divergence, non-finite loss.
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("io error: {0}")]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, LabError>;

impl LabError {
    /// Process exit code for the CLI: 1 usage, 2 data, 3 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            LabError::Config(_) => 1,
            LabError::Shape(_) | LabError::Data(_) | LabError::Io(_) => 2,
            LabError::Numeric(_) => 3,
        }
    }
}
