use thiserror::Error;

/// Errors raised while loading checkpoint files.
#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint file (bad magic bytes)")]
    BadMagic,

    #[error("unsupported checkpoint version {found} (expected {expected})")]
    VersionMismatch { found: u16, expected: u16 },

    #[error("checkpoint shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("checkpoint truncated while reading {0}")]
    Truncated(&'static str),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dataset is empty after preprocessing")]
    EmptyDataset,

    #[error("training diverged: {0}")]
    TrainingDiverged(String),

    #[error("support violation: logging probability is zero for context {context}, action {action}")]
    SupportViolation { context: String, action: usize },

    #[error("degenerate context {0}: expected reward under the logging policy is zero")]
    DegenerateContext(usize),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// Whether the error stems from bad user input (config, data, arguments)
    /// rather than from a failure while running.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidInput(_)
                | Error::EmptyDataset
                | Error::Config(_)
                | Error::Csv(_)
                | Error::Json(_)
                | Error::Checkpoint(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
