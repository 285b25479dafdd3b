use std::process::ExitCode;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// A check ran and did not pass.
    #[error("verification failed: {0}")]
    Verification(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numerical error: {0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            CliError::Verification(_) => 1,
            CliError::Usage(_) | CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numerical(_) => 4,
        })
    }
}

impl From<s2s_core::Error> for CliError {
    fn from(e: s2s_core::Error) -> Self {
        use s2s_core::Error as E;
        match e {
            E::Config { context, message } => CliError::Config(format!("{context}: {message}")),
            E::Usage(m) => CliError::Usage(m),
            E::Numerical(m) => CliError::Numerical(m),
            E::Data(m) => CliError::Data(m),
            E::Parse { .. } | E::Io { .. } => CliError::Data(e.to_string()),
        }
    }
}
