//! CLI error taxonomy with stable exit codes: 2 for configuration
//! problems, 3 for numerical or design failures, 4 for I/O failures.

use std::fmt;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Numerical(String),
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Io(_) => 4,
        }
    }

    pub fn io(context: &str, err: std::io::Error) -> Self {
        CliError::Io(format!("{context}: {err}"))
    }

    /// Wraps a core error raised while executing an already-validated
    /// configuration.
    pub fn from_core(err: stc_core::Error) -> Self {
        match err {
            stc_core::Error::Io(e) => CliError::Io(e.to_string()),
            other => CliError::Numerical(other.to_string()),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "configuration error: {msg}"),
            CliError::Numerical(msg) => write!(f, "numerical error: {msg}"),
            CliError::Io(msg) => write!(f, "io error: {msg}"),
        }
    }
}

impl std::error::Error for CliError {}
