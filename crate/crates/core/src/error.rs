use std::io;

use thiserror::Error;

/// Errors produced by simulation, estimation and detection routines.
#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value is out of its admissible range.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A region that must contain points or lattice nodes is empty.
    #[error("empty region: {0}")]
    EmptyRegion(String),

    /// A numerical quantity is undefined for the given data (zero variance, empty window, ...).
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Malformed input data.
    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
