use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("file not found: {0}")]
    MissingFile(PathBuf),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("unknown ticker: {0}")]
    UnknownTicker(String),

    #[error("ticker {ticker} has no close price on {date}")]
    MissingClose { ticker: String, date: String },

    #[error("non-positive close {value} for {ticker} on {date}")]
    NonPositiveClose { ticker: String, date: String, value: f64 },

    #[error("no dates left after aligning tickers")]
    EmptyAlignment,

    #[error("window of {window} days exceeds {available} available rows")]
    WindowTooLong { window: usize, available: usize },

    #[error("split boundaries out of order or outside data range: {0}")]
    SplitOrder(String),

    #[error("index {index} out of range (len {len})")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("non-finite gradient")]
    NonFiniteGradient,

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("training diverged at epoch {epoch}: {detail}")]
    Diverged { epoch: usize, detail: String },

    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("empty {0}")]
    Empty(&'static str),
}
