//! Error type shared by the library and the CLI.
//!
//! Errors are grouped into the three failure classes the CLI maps to exit codes:
//! configuration (2), data (3), and numeric (4).

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid or inconsistent configuration: bad JSON, out-of-range hyperparameters,
    /// missing required flags.
    #[error("config error: {0}")]
    Config(String),

    /// Unreadable or malformed data: missing files, bad magic, truncation, shape
    /// mismatches between files that must agree.
    #[error("data error: {0}")]
    Data(String),

    /// Numeric failure at runtime: non-finite loss, failed gradient check.
    #[error("numeric error: {0}")]
    Numeric(String),
}

impl Error {
    /// Process exit code for this error class: 2 config, 3 data, 4 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Data(_) => 3,
            Error::Numeric(_) => 4,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Data(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
