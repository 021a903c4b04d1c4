use std::path::PathBuf;

use chrono::NaiveDate;
use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to read price file for {asset} at {path}: {source}")]
    MissingFile {
        asset: String,
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{file}:{line}: {msg}")]
    Parse {
        file: String,
        line: usize,
        msg: String,
    },

    #[error("{file}: no `{column}` column in header")]
    MissingColumn { file: String, column: String },

    #[error("asset {0} has no observations in the requested date range")]
    EmptyAsset(String),

    #[error("no dates fall inside the requested range")]
    EmptyRange,

    #[error("non-positive price {price} for {asset} on {date}")]
    NonPositivePrice {
        asset: String,
        date: NaiveDate,
        price: f64,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("cholesky factorisation failed after jitter {jitter:.3e} (condition estimate {condition:.3e})")]
    NotPositiveDefinite { jitter: f64, condition: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("degenerate training series: {0}")]
    Degenerate(String),

    #[error("insufficient data: need {required} observations, have {available}")]
    InsufficientData { required: usize, available: usize },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("config: {0}")]
    Config(String),

    #[error("split {split} asset {asset}: {source}")]
    InSplit {
        split: usize,
        asset: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn in_split(self, split: usize, asset: impl Into<String>) -> Self {
        Error::InSplit {
            split,
            asset: asset.into(),
            source: Box::new(self),
        }
    }
}
