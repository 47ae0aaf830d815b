use thiserror::Error;

/// Errors raised while building or solving a benchmark instance.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("nonpositive coefficient {value} at {location}")]
    NonPositive { value: f64, location: String },

    #[error("matrix is singular beyond the declared nullspace (pivot ratio {0:e})")]
    Singular(f64),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("GMRES breakdown after {iterations} iterations (relative residual {residual:e})")]
    Breakdown { iterations: usize, residual: f64 },

    #[error("instance too large for dense analysis: {0} unknowns")]
    TooLarge(usize),

    #[error("eigenvalue iteration did not converge")]
    EigenNoConvergence,

    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("config parse: {0}")]
    Toml(#[from] toml::de::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
