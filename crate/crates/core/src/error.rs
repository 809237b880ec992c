use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{what} = {value} outside [{lo}, {hi}]")]
    Range {
        what: String,
        value: f64,
        lo: f64,
        hi: f64,
    },
    #[error("unknown policy `{0}`")]
    UnknownPolicy(String),
    #[error("degenerate amplitude range: {0}")]
    DegenerateRange(String),
    #[error("invalid raster: {0}")]
    Raster(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("alignment error: expected {expected}, got {got}")]
    Alignment { expected: usize, got: usize },
    #[error("degenerate feature: zero norm")]
    DegenerateFeature,
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Parameter(_) | Error::UnknownPolicy(_) => 1,
            Error::Numerical(_) => 3,
            _ => 2,
        }
    }
}
