use thiserror::Error;

use crate::attribution::AttributionError;
use crate::connect::ConnectError;
use crate::harness::HarnessError;
use crate::models::ModelError;
use crate::panel::PanelError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Crate-level error, one variant per subsystem.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Panel(#[from] PanelError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error(transparent)]
    Attribution(#[from] AttributionError),
    #[error(transparent)]
    Connect(#[from] ConnectError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Invalid(String),
}

/// Coarse classification used by the command line front-end for exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Validation,
    Numerical,
    Io,
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Panel(e) => e.kind(),
            Error::Model(e) => e.kind(),
            Error::Harness(e) => e.kind(),
            Error::Attribution(e) => e.kind(),
            Error::Connect(e) => e.kind(),
            Error::Io { .. } => ErrorKind::Io,
            Error::Json(_) | Error::Csv(_) | Error::Invalid(_) => ErrorKind::Validation,
        }
    }
}
