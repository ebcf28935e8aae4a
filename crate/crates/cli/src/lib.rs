//! Experiment driver behind the `hbrate` binary: certification, scheme runs,
//! comparisons, Lyapunov validation and ODE studies.

pub mod commands;
pub mod config;
pub mod output;
pub mod report;

use hbrate::schemes::SchemeError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("infeasible regime: {0}")]
    Infeasible(String),
    #[error("numerical failure: {0}")]
    Numeric(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("{0} check(s) failed")]
    ChecksFailed(usize),
}

impl CliError {
    /// 0 success, 1 numerical failure (or failed checks), 2 invalid
    /// configuration or regime.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) | CliError::Infeasible(_) => 2,
            CliError::Numeric(_) | CliError::Io(_) | CliError::ChecksFailed(_) => 1,
        }
    }
}

pub(crate) fn scheme_error(e: SchemeError) -> CliError {
    match e {
        SchemeError::NonFinite { .. } => CliError::Numeric(e.to_string()),
        _ => CliError::Config(e.to_string()),
    }
}
