//! Command implementations behind the `tephra` binary, exposed as a library
//! so integration tests can drive pipeline stages in-process.

pub mod commands;
pub mod config;
pub mod manifest;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad configuration, missing inputs, mixed artifacts: exit code 2.
    #[error("{0}")]
    Config(String),
    /// Failures while running: exit code 3.
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl From<tephra_core::Error> for CliError {
    fn from(e: tephra_core::Error) -> Self {
        match e {
            tephra_core::Error::InvalidConfig(_)
            | tephra_core::Error::InvalidPriorBox(_) => CliError::Config(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}
