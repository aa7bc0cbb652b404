use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    // corpus
    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("duplicate record for base station {bs_id} at hour {hour}")]
    InconsistentHours { bs_id: String, hour: u64 },
    #[error("corpus is empty after cleaning")]
    EmptyCorpus,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid traffic matrix: {0}")]
    InvalidMatrix(String),

    // pipeline
    #[error("seasonality {m} must be smaller than the series length {len}")]
    SeasonalityTooLarge { m: usize, len: usize },
    #[error("window {w} must be smaller than the differenced length {len}")]
    WindowTooLarge { w: usize, len: usize },
    #[error("need at least {needed} samples, got {got}")]
    InsufficientSamples { needed: usize, got: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    // regressor
    #[error("underdetermined system: {samples} samples for {params} parameters")]
    Underdetermined { samples: usize, params: usize },
    #[error("conjugate gradient did not converge in {iterations} iterations (gradient norm {grad_norm:e})")]
    NotConverged {
        iterations: usize,
        grad_norm: f64,
        model: Box<crate::regressor::BlockModel>,
        diagnostics: Box<crate::regressor::TrainingDiagnostics>,
    },
    #[error("singular system (condition estimate {condition:e})")]
    SingularSystem { condition: f64 },

    // forecaster
    #[error("insufficient history: need {needed} hours before the forecast start, have {available}")]
    InsufficientHistory { needed: usize, available: usize },
    #[error("unknown base station {0}")]
    UnknownBs(String),
    #[error("hour {hour} is outside the corpus range")]
    HourOutOfRange { hour: u64 },

    // evaluation
    #[error("length mismatch: {actual} actual values vs {forecast} forecasts")]
    LengthMismatch { actual: usize, forecast: usize },
    #[error("mean of the actual series is zero")]
    ZeroMeanActual,
    #[error("no station could be scored ({excluded} excluded)")]
    NothingScored { excluded: usize },
    #[error("invalid seasonality grid: {0}")]
    InvalidGrid(String),

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

    /// True for failures of the numerical routines rather than of the input data.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NotConverged { .. } | Error::SingularSystem { .. } | Error::Underdetermined { .. }
        )
    }
}
