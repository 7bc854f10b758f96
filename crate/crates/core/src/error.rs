use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("Riccati iteration for sensor {sensor} did not converge within {iterations} iterations (last residual {residual:e})")]
    RiccatiNonConvergence {
        sensor: usize,
        iterations: usize,
        residual: f64,
    },

    #[error("covariance lost positive semidefiniteness (min eigenvalue {min_eigenvalue:e})")]
    NotPsd { min_eigenvalue: f64 },

    #[error("power iteration did not converge within {0} iterations")]
    StationaryNonConvergence(usize),

    #[error("index {index} out of range (limit {limit})")]
    IndexOutOfRange { index: usize, limit: usize },

    #[error("joint channel chain would have {states} states, limit is {limit}")]
    ChainTooLarge { states: u128, limit: u128 },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("replay buffer holds {available} transitions, batch needs {requested} (warm-up incomplete)")]
    WarmUp { available: usize, requested: usize },

    #[error("config {path}: {message}")]
    Config { path: String, message: String },

    #[error("unknown {kind} '{name}'")]
    Unknown { kind: &'static str, name: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("training aborted at episode {episode}: {reason}")]
    TrainingAborted { episode: usize, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }
}
