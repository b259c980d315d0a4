use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed or non-finite input data.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A numeric parameter outside its admissible range.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A time window that does not fit inside the recording.
    #[error("window [{start_s}, {end_s}) s outside recording of {duration_s} s")]
    OutOfRange {
        start_s: f64,
        end_s: f64,
        duration_s: f64,
    },

    #[error("empty result: {0}")]
    Empty(String),

    #[error("training failed: {0}")]
    Training(String),

    #[error("stratification failed: {0}")]
    Stratification(String),

    #[error("solver did not converge after {iterations} iterations (kkt residual {residual:e})")]
    Convergence { iterations: usize, residual: f64 },

    #[error("corpus error: {0}")]
    Corpus(String),

    #[error("configuration error: {0}")]
    Config(String),

    /// Pipeline constants stored with a model disagree with the current run.
    #[error("provenance mismatch: {0}")]
    Provenance(String),

    #[error("parse error at {path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
