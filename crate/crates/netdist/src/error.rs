use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("no connected placement found after {attempts} samples; density infeasible for the communication range")]
    ConnectivityRejection { attempts: usize },

    #[error("checkpoint rejected: {0}")]
    Checkpoint(String),

    #[error("training aborted at iteration {iteration}: non-finite {quantity}")]
    NonFinite { iteration: usize, quantity: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("config parse error: {0}")]
    Toml(#[from] toml::de::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
