use std::fmt;

use embdistill::Error;

/// A command failure and the process exit code it maps to.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags, config files, or settings: exit 1.
    Config(String),
    /// Reported by the library; see [`CliError::exit_code`].
    Core(Error),
}

impl CliError {
    /// 1 for configuration and domain errors, 3 for a non-finite loss,
    /// 2 for everything to do with input data and artifacts.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Core(Error::Domain(_)) => 1,
            CliError::Core(Error::NonFinite { .. }) => 3,
            CliError::Core(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "config error: {msg}"),
            CliError::Core(e) => e.fmt(f),
        }
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(Error::Io(e))
    }
}
