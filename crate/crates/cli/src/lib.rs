//! Experiment runner behind the `harm` binary: generate data, train every
//! method, build adversarial sets, write bound reports and run the
//! verification suites.

pub mod commands;
pub mod config;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("validation: {0}")]
    Validation(String),
    #[error("numerical: {0}")]
    Numerical(String),
    #[error("io: {0}")]
    Io(String),
}

impl CliError {
    /// Process exit code: 1 validation, 2 numerical failure, 3 IO.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Numerical(_) => 2,
            CliError::Io(_) => 3,
        }
    }
}

impl From<harm_core::Error> for CliError {
    fn from(e: harm_core::Error) -> Self {
        match e {
            harm_core::Error::Numerical(m) => CliError::Numerical(m),
            harm_core::Error::Io(io) => CliError::Io(io.to_string()),
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
