//! Error type of the command-line layer and its exit codes.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid input: {0}")]
    Input(String),
    #[error("invalid arguments: {0}")]
    Usage(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error(transparent)]
    Core(#[from] bowtie_core::Error),
}

/// Exit code for bad arguments, unreadable inputs and failed writes.
pub const EXIT_USAGE: i32 = 2;
/// Exit code when a fit or prediction aborts on a numerical failure.
pub const EXIT_NUMERICAL: i32 = 3;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(bowtie_core::Error::Numerical { .. }) => EXIT_NUMERICAL,
            _ => EXIT_USAGE,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Input(e.to_string())
    }
}
