use thiserror::Error;

/// Errors raised by the interval engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty sample")]
    EmptySample,

    #[error("no history")]
    NoHistory,

    #[error("nonpositive scale: {0}")]
    NonpositiveScale(f64),

    #[error("quantile forecasts crossed: q_lo {lo} > q_hi {hi}")]
    CrossedQuantiles { lo: f64, hi: f64 },

    #[error("score kind requires channel {0}")]
    MissingChannel(&'static str),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("invalid panel: {0}")]
    InvalidPanel(String),

    #[error("window of {k} steps exceeds horizon {horizon}")]
    WindowTooLong { k: usize, horizon: usize },

    #[error("too few series: {0}")]
    TooFewSeries(String),

    #[error("zero coverage: inverse efficiency undefined")]
    ZeroCoverage,

    #[error("every interval is unbounded: no finite width to substitute")]
    NoFiniteWidth,

    #[error("{file}: row {row}, column {column}: {message}")]
    Schema {
        file: String,
        row: usize,
        column: String,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Whether the error stems from user input (as opposed to an internal failure).
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Io(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
