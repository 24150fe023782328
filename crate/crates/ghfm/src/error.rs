use std::path::{Path, PathBuf};

use fusion_core::GhfmError;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Bad flags or flag combinations.
    #[error("{0}")]
    Usage(String),

    /// Input that violates a file schema or a dataset invariant.
    #[error("{0}")]
    Schema(String),

    #[error("{0}")]
    Numeric(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

/// One-line error report written to stderr.
#[derive(Debug, Serialize)]
pub struct ErrorLine<'a> {
    pub error: &'a str,
    pub kind: &'a str,
    pub message: String,
}

impl Error {
    pub fn io(path: &Path, source: std::io::Error) -> Error {
        Error::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Error::Usage(_) => "usage",
            Error::Schema(_) => "schema",
            Error::Numeric(_) => "numeric",
            Error::Io { .. } => "io",
        }
    }

    /// 2 for usage and schema errors, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) | Error::Schema(_) => 2,
            Error::Numeric(_) | Error::Io { .. } => 1,
        }
    }

    pub fn to_json_line(&self) -> String {
        let line = ErrorLine {
            error: "ghfm",
            kind: self.kind(),
            message: self.to_string(),
        };
        serde_json::to_string(&line)
            .unwrap_or_else(|_| format!("{{\"error\":\"ghfm\",\"kind\":\"{}\"}}", self.kind()))
    }
}

impl From<GhfmError> for Error {
    fn from(e: GhfmError) -> Self {
        match e {
            GhfmError::Argument(_)
            | GhfmError::Dimension(_)
            | GhfmError::Dataset(_)
            | GhfmError::Mapping(_) => Error::Schema(e.to_string()),
            GhfmError::Domain { .. } | GhfmError::Numeric(_) | GhfmError::Metric(_) => {
                Error::Numeric(e.to_string())
            }
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Schema(format!("JSON: {e}"))
    }
}
