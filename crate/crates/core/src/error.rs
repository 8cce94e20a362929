use thiserror::Error;

pub type Result<T, E = HgpoError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum HgpoError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("step ({trajectory}, {t}) out of range: {reason}")]
    OutOfRange {
        trajectory: usize,
        t: usize,
        reason: String,
    },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("level mismatch: index built with K={index}, config requests K={config}")]
    LevelMismatch { index: usize, config: usize },

    #[error("batch of {steps} steps exceeds the brute-force guard of {limit}")]
    TooLarge { steps: usize, limit: usize },

    #[error("unknown action '{0}'")]
    UnknownAction(String),

    #[error("episode already finished")]
    EpisodeDone,

    #[error("invalid batch: {0}")]
    InvalidBatch(String),

    #[error("unknown environment '{0}'")]
    UnknownEnvironment(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl HgpoError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        HgpoError::InvalidArgument(msg.into())
    }
}
