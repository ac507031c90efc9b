use thiserror::Error;

/// Errors raised by the constitutive engine, the networks, and the I/O layer.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid stress state: {0}")]
    InvalidStressState(String),

    #[error("stress integration did not converge after {iterations} iterations (|F| = {f_residual:.3e}, |R_sigma| = {stress_residual:.3e})")]
    IntegrationFailure {
        iterations: usize,
        f_residual: f64,
        stress_residual: f64,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable category, used for CLI exit reporting.
    pub fn category(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "invalid-argument",
            Error::InvalidStressState(_) => "invalid-stress-state",
            Error::IntegrationFailure { .. } => "integration-failure",
            Error::Shape(_) => "shape",
            Error::NonFinite(_) => "non-finite",
            Error::Format(_) => "format",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
