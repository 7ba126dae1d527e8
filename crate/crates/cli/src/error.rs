use std::process::ExitCode;

use thiserror::Error;

/// Failure classes, one per process exit status.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Numerical(String),
    #[error("{0}")]
    Breach(String),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            CliError::Validation(_) => 1,
            CliError::Numerical(_) => 2,
            CliError::Breach(_) => 3,
        })
    }

    pub fn context(self, what: impl std::fmt::Display) -> Self {
        match self {
            CliError::Validation(m) => CliError::Validation(format!("{what}: {m}")),
            CliError::Numerical(m) => CliError::Numerical(format!("{what}: {m}")),
            CliError::Breach(m) => CliError::Breach(format!("{what}: {m}")),
        }
    }
}

impl From<mashvco::Error> for CliError {
    fn from(e: mashvco::Error) -> Self {
        use mashvco::Error as E;
        let msg = e.to_string();
        match e {
            E::NonConvergence { .. }
            | E::RankDeficient(_)
            | E::Degenerate(_)
            | E::GridTooCoarse { .. }
            | E::FixedPointOverflow(_)
            | E::LengthMismatch(..)
            | E::InsufficientSamples { .. } => CliError::Numerical(msg),
            _ => CliError::Validation(msg),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Validation(format!("i/o: {e}"))
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Validation(format!("json: {e}"))
    }
}

impl From<toml::de::Error> for CliError {
    fn from(e: toml::de::Error) -> Self {
        CliError::Validation(e.to_string())
    }
}
