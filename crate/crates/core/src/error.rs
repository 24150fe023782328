use alloc::string::String;
use thiserror::Error;

/// Errors produced by the numerical core.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum GhfmError {
    #[error("t = {value} lies outside the basis domain [{start}, {end}]")]
    Domain { value: f64, start: f64, end: f64 },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid dataset: {0}")]
    Dataset(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("no fitted unit for subject id `{0}`")]
    Mapping(String),

    #[error("metric undefined: {0}")]
    Metric(String),
}

pub type Result<T> = core::result::Result<T, GhfmError>;
