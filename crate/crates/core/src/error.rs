use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("formation needs at least 2 agents, got {0}")]
    TooFewAgents(usize),
    #[error("unrealizable formation shape: {0}")]
    UnrealizableShape(String),
    #[error("formation radius {radius:.3} m does not fit an arena of side {side} m")]
    ArenaTooSmall { radius: f64, side: f64 },
    #[error("step called on a finished episode")]
    EpisodeFinished,
    #[error("expected {expected} actions, got {got}")]
    ActionCountMismatch { expected: usize, got: usize },
    #[error("bad network architecture: {0}")]
    BadArchitecture(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("not enough replay data: need an episode with at least {needed} transitions")]
    InsufficientData { needed: usize },
    #[error("checkpoint checksum mismatch")]
    ChecksumMismatch,
    #[error("invalid checkpoint: {0}")]
    InvalidCheckpoint(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
