use thiserror::Error;

/// Errors surfaced by the simulation, learning and analysis layers.
#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value violates its documented constraints.
    #[error("configuration error: {0}")]
    Config(String),

    /// A caller broke the step/observe protocol (dead or unknown agent ids,
    /// missing actions).
    #[error("protocol error: {0}")]
    Protocol(String),

    /// A mathematical precondition does not hold.
    #[error("domain error: {0}")]
    Domain(String),

    /// Non-finite values appeared during optimisation.
    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
