use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the toolkit.
///
/// The variants line up with the failure classes the command-line front end
/// reports: configuration and usage problems, bad or missing data, and
/// numerical breakdowns during training or verification.
#[derive(Debug, Error)]
pub enum Error {
    /// An invalid network or hyperparameter configuration.
    #[error("configuration error in {context}: {message}")]
    Config { context: String, message: String },

    /// An API used outside its contract (bad argument, stale tape, ...).
    #[error("usage error: {0}")]
    Usage(String),

    /// Input data that does not satisfy the dataset invariants.
    #[error("data error: {0}")]
    Data(String),

    /// A malformed line in a text file.
    #[error("parse error at {path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    /// A non-finite loss or gradient.
    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn config(context: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            context: context.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
