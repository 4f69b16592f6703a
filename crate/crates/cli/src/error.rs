use std::fmt;
use std::io;

use ksrecon::ReconError;

/// Failure classes, each with its own process exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    DataMismatch(String),
    Divergence(String),
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::DataMismatch(_) => 3,
            CliError::Divergence(_) => 4,
            CliError::Other(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::DataMismatch(m) => write!(f, "data mismatch: {m}"),
            CliError::Divergence(m) => write!(f, "numeric divergence: {m}"),
            CliError::Other(m) => write!(f, "{m}"),
        }
    }
}

impl From<ReconError> for CliError {
    fn from(e: ReconError) -> Self {
        let text = e.to_string();
        match e.root() {
            ReconError::Config(_) | ReconError::OutOfBounds(_) => CliError::Usage(text),
            ReconError::DimensionMismatch(_) | ReconError::DomainMismatch { .. } | ReconError::Shape(_) => {
                CliError::DataMismatch(text)
            }
            ReconError::Divergence { .. } => CliError::Divergence(text),
            _ => CliError::Other(text),
        }
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Other(e.to_string())
    }
}
