//! Error type shared by all subcommands, carrying the process exit code.

use std::fmt;

#[derive(Debug)]
pub enum CliError {
    /// Contract or configuration violation (exit code 1).
    Contract(mcout_core::Error),
    /// Filesystem or serialization failure (exit code 2).
    Io(String),
    /// Non-finite numbers reached the optimizer (exit code 3).
    Numeric(String),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Contract(_) => 1,
            CliError::Io(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }

    pub fn io(context: &str, err: impl fmt::Display) -> Self {
        CliError::Io(format!("{context}: {err}"))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Contract(e) => write!(f, "{e}"),
            CliError::Io(msg) => write!(f, "{msg}"),
            CliError::Numeric(msg) => write!(f, "{msg}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<mcout_core::Error> for CliError {
    fn from(e: mcout_core::Error) -> Self {
        CliError::Contract(e)
    }
}
