use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration field `{field}`: {reason}")]
    Config { field: &'static str, reason: String },

    #[error("episode finished: horizon of {horizon} steps reached")]
    EpisodeFinished { horizon: u64 },

    #[error("shape mismatch: expected {expected} values, got {actual}")]
    Shape { expected: usize, actual: usize },

    #[error("malformed {kind} payload: {reason}")]
    MalformedPayload { kind: &'static str, reason: String },

    #[error("{players} players exceeds exact enumeration limit of {max}; use the sampled estimator")]
    Capacity { players: usize, max: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unsupported observation mode: {0}")]
    UnsupportedMode(String),

    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
