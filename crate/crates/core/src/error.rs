use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("ingestion error at row {row}: {message}")]
    Ingest { row: usize, message: String },

    #[error("ingestion error: {0}")]
    Benchmark(String),

    #[error("merge error: {0}")]
    Merge(String),

    #[error("persona error: {0}")]
    Persona(String),

    #[error("calibration infeasible: {0}")]
    Infeasible(String),

    #[error("calibration error: {0}")]
    Calibration(String),

    #[error("backend error: {message}")]
    Backend { message: String, raw: Option<String> },

    #[error("template error: {0}")]
    Template(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("transport error{}: {message}", status.map(|s| format!(" (HTTP {s})")).unwrap_or_default())]
    Transport { status: Option<u16>, message: String },

    #[error("parse error: {message}")]
    Parse { message: String, raw: String },

    #[error("evaluation error: {0}")]
    Evaluate(String),

    #[error("sampling error: {0}")]
    Sampling(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Raw model output attached to backend and parse failures.
    pub fn raw_payload(&self) -> Option<&str> {
        match self {
            Error::Backend { raw, .. } => raw.as_deref(),
            Error::Parse { raw, .. } => Some(raw),
            _ => None,
        }
    }
}
