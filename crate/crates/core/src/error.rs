use thiserror::Error;

use crate::types::AppId;

#[derive(Debug, Error)]
pub enum Error {
    #[error("object of {size} bytes exceeds the {limit}-byte limit")]
    OversizeObject { size: usize, limit: usize },

    #[error("free segment pool exhausted")]
    OutOfMemory,

    #[error("unknown application {0}")]
    UnknownApp(AppId),

    #[error("application {0} is already registered")]
    DuplicateApp(AppId),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("need at least 2 sealed segments to clean, have {0}")]
    NotEnoughSegments(usize),

    #[error("requested window of {window}us exceeds {available}us of recorded history")]
    InsufficientHistory { window: u64, available: u64 },

    #[error("index points at a record that no longer matches its key")]
    StaleLocation,

    #[error("line {line}: {reason}")]
    MalformedLine { line: usize, reason: String },

    #[error("line {line}: timestamp {ts} precedes {previous}")]
    NonMonotonicTimestamp { line: usize, ts: u64, previous: u64 },

    #[error("{0}")]
    Usage(String),

    #[error("invalid workload: {0}")]
    InvalidSpec(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

impl Error {
    /// Errors caused by bad input data rather than bad usage.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::MalformedLine { .. }
                | Error::NonMonotonicTimestamp { .. }
                | Error::Csv(_)
                | Error::Json(_)
                | Error::Toml(_)
                | Error::StaleLocation
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
