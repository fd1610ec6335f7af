use std::path::PathBuf;

use mzinb::ErrorKind;
use thiserror::Error;

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NOT_CONVERGED: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] mzinb::Error),

    #[error("{0}")]
    Usage(String),

    #[error("cannot write `{path}`: {source}")]
    Write {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("cannot read `{path}`: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("optimizer did not converge ({message}); results written to `{}`", out.display())]
    NotConverged { message: String, out: PathBuf },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) => match e.kind() {
                ErrorKind::Config | ErrorKind::Io => EXIT_CONFIG,
                ErrorKind::Data => EXIT_DATA,
                ErrorKind::Estimation => EXIT_NOT_CONVERGED,
            },
            CliError::Usage(_) | CliError::Read { .. } | CliError::Write { .. } => EXIT_CONFIG,
            CliError::NotConverged { .. } => EXIT_NOT_CONVERGED,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
