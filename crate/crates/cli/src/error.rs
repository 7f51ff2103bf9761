//! Error carrier mapping every failure onto the process exit contract:
//! 2 = configuration, 3 = data, 4 = numeric.

use std::fmt;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub error: anyhow::Error,
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn config(error: impl Into<anyhow::Error>) -> Self {
        CliError { code: 2, error: error.into() }
    }

    pub fn data(error: impl Into<anyhow::Error>) -> Self {
        CliError { code: 3, error: error.into() }
    }

    pub fn msg(code: i32, msg: impl Into<String>) -> Self {
        CliError { code, error: anyhow::anyhow!(msg.into()) }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

impl std::error::Error for CliError {}

/// Engine errors carry their own split: bad parameters are configuration,
/// malformed artifacts are data, and solver failures are numeric.
impl From<pomcrf::Error> for CliError {
    fn from(e: pomcrf::Error) -> Self {
        let code = match &e {
            pomcrf::Error::InvalidParameter(_) | pomcrf::Error::MissingUnaries => 2,
            pomcrf::Error::Format(_) | pomcrf::Error::Io(_) => 3,
            pomcrf::Error::Infeasible(_)
            | pomcrf::Error::TooLarge(_)
            | pomcrf::Error::Numeric(_) => 4,
        };
        CliError { code, error: e.into() }
    }
}
