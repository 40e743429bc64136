use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("value {value} outside [{low}, {high}]")]
    OutOfRange { value: f64, low: f64, high: f64 },

    #[error("degenerate posterior: {0}")]
    Degenerate(String),

    #[error("oracle failure: {message}")]
    Oracle { message: String, output: String },

    #[error("refusing to extrapolate tabulated front at epsilon {epsilon} (table covers [{low}, {high}])")]
    Extrapolation { epsilon: f64, low: f64, high: f64 },

    #[error("{0} is unavailable without simulation ground truth")]
    Unsupported(&'static str),

    #[error("session suspended: {0}")]
    Suspended(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}, row {row}: {message}")]
    Table {
        path: PathBuf,
        row: usize,
        message: String,
    },

    #[error("config: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
