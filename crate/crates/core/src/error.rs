use std::path::PathBuf;

/// Errors raised across the crate.
#[derive(Debug, thiserror::Error)]
pub enum EqcError {
    #[error("degree mismatch: expected {expected}, got {got}")]
    DegreeMismatch { expected: usize, got: usize },

    #[error("not a permutation: {0:?}")]
    InvalidPermutation(Vec<usize>),

    #[error("group order exceeds cap of {cap} elements")]
    GroupCapExceeded { cap: usize },

    #[error("invalid group: {0}")]
    InvalidGroup(String),

    #[error("width mismatch in {context}: expected {expected}, got {got}")]
    WidthMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid network spec: {0}")]
    InvalidSpec(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("illegal action {action} for agent {agent}: {reason}")]
    IllegalAction {
        agent: usize,
        action: usize,
        reason: String,
    },

    #[error("episode already terminated")]
    EpisodeOver,

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = EqcError> = std::result::Result<T, E>;

impl EqcError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        EqcError::Io {
            path: path.into(),
            source,
        }
    }
}
