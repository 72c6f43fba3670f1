use thiserror::Error;

/// Errors raised across the estimation stack.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid model: {0}")]
    InvalidSpec(String),

    #[error("parameter constraint violated: {0}")]
    Constraint(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("weight matrix at t={t} is not positive definite")]
    NotPositiveDefinite { t: usize },

    #[error("correlation parameter r={r} outside the positive-definite range for d={d}")]
    CorrelationRange { r: f64, d: usize },

    #[error("event count exceeded max_events={max_events} (intensity {intensity})")]
    RunawayIntensity { max_events: usize, intensity: f64 },

    #[error("optimizer failure: {0}")]
    Optimizer(String),

    #[error("csv error at line {line}: {msg}")]
    Csv { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Stable machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Dimension(_) => "dimension",
            Error::InvalidSpec(_) => "invalid-spec",
            Error::Constraint(_) => "constraint",
            Error::InvalidData(_) => "invalid-data",
            Error::NonFinite(_) => "non-finite",
            Error::Singular(_) => "singular",
            Error::NotPositiveDefinite { .. } => "not-positive-definite",
            Error::CorrelationRange { .. } => "correlation-range",
            Error::RunawayIntensity { .. } => "runaway-intensity",
            Error::Optimizer(_) => "optimizer",
            Error::Csv { .. } => "csv",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}
