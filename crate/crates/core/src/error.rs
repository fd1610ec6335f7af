use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Coarse classification used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Bad configuration, schema, or command input.
    Config,
    /// Input data that is well-formed but unusable.
    Data,
    /// Numerical failure during estimation.
    Estimation,
    /// I/O failure.
    Io,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("parse error at row {row}, column `{column}`: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("data error: {0}")]
    Data(String),

    #[error("column `{0}` has zero variance")]
    ZeroVariance(String),

    #[error("rank error: {0}")]
    Rank(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("non-finite likelihood contribution at observation {index}")]
    Overflow { index: usize },

    #[error("inner mode search did not converge after {iterations} iterations (gradient max-norm {grad_norm:.3e})")]
    InnerNonConvergence { iterations: usize, grad_norm: f64 },

    #[error("estimation error: {0}")]
    Estimation(String),

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_)
            | Error::Schema(_)
            | Error::Parse { .. }
            | Error::Unsupported(_)
            | Error::Contract(_) => ErrorKind::Config,
            Error::Data(_) | Error::ZeroVariance(_) | Error::Rank(_) | Error::Domain(_) => {
                ErrorKind::Data
            }
            Error::Overflow { .. } | Error::InnerNonConvergence { .. } | Error::Estimation(_) => {
                ErrorKind::Estimation
            }
            Error::Io(_) => ErrorKind::Io,
            Error::Csv(e) => match e.kind() {
                csv::ErrorKind::Io(_) => ErrorKind::Io,
                _ => ErrorKind::Config,
            },
        }
    }
}
