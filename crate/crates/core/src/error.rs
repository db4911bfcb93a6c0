use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, ForecastError>;

#[derive(Debug, Error)]
pub enum ForecastError {
    #[error("insufficient data for {split}: {detail}")]
    InsufficientData { split: String, detail: String },

    #[error("zero variance: cannot standardize a constant series")]
    ZeroVariance,

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    Shape {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("training diverged at epoch {epoch}: non-finite loss")]
    Divergence { epoch: usize },

    #[error("pool member for segment {segment} failed: {source}")]
    PoolMember {
        segment: usize,
        #[source]
        source: Box<ForecastError>,
    },

    #[error("column '{requested}' not found; available columns: {available:?}")]
    MissingColumn {
        requested: String,
        available: Vec<String>,
    },

    #[error("cannot parse value {value:?} in column '{column}' at row {row}")]
    ParseValue {
        row: usize,
        column: String,
        value: String,
    },

    #[error("empty data: {0}")]
    EmptyData(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed record in {path}: {detail}")]
    Format { path: PathBuf, detail: String },

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<ForecastError>,
    },

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

impl ForecastError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Self::Parameter(msg.into())
    }

    /// Wraps the error with the name of the pipeline stage it surfaced in.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Self::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
