use std::io;

use thiserror::Error;

use crate::kspace::Domain;

pub type Result<T> = std::result::Result<T, ReconError>;

#[derive(Debug, Error)]
pub enum ReconError {
    #[error("domain mismatch: expected {expected}, found {found}")]
    DomainMismatch { expected: Domain, found: Domain },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("degenerate statistics: {0}")]
    DegenerateStatistics(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("calibration error: {0}")]
    Calibration(String),

    #[error("solver error: {0}")]
    Solver(String),

    #[error("{context} diverged at iteration {iteration}")]
    Divergence { context: String, iteration: usize },

    #[error("out of bounds: {0}")]
    OutOfBounds(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error("slice {slice}: {source}")]
    Slice {
        slice: usize,
        #[source]
        source: Box<ReconError>,
    },
}

impl ReconError {
    /// Strips per-slice wrapping to reach the underlying cause.
    pub fn root(&self) -> &ReconError {
        match self {
            ReconError::Slice { source, .. } => source.root(),
            other => other,
        }
    }
}
