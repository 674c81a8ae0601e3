//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by the pipeline, from CSV ingest through training.
#[derive(Error, Debug)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),
    #[error("encoding error in column '{column}': undeclared level '{value}'")]
    Encoding { column: String, value: String },
    #[error("unmapped target value '{value}' for task '{task}'")]
    Target { task: String, value: String },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("training aborted at fold {fold}, epoch {epoch}: {reason}")]
    TrainingAbort {
        fold: usize,
        epoch: usize,
        reason: String,
    },
    #[error("report error: {0}")]
    Report(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// True for errors caused by bad input or configuration rather than a
    /// failure during training. CLI maps these to exit code 2, training
    /// failures to exit code 3.
    pub fn is_input_error(&self) -> bool {
        !matches!(self, Error::TrainingAbort { .. })
    }
}
