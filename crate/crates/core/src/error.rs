use std::path::PathBuf;

/// Error type shared across the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch for `{name}`: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },

    #[error("non-finite value in `{name}`")]
    NonFinite { name: String },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("training diverged at step {step}: {what}")]
    Diverged { step: usize, what: String },

    #[error("eigensolver failed: {0}")]
    Eigensolver(String),

    #[error("infeasible input: {0}")]
    Infeasible(String),

    #[error("format error in {path}: {what} (at byte offset {offset})")]
    Format {
        path: PathBuf,
        what: String,
        offset: u64,
    },

    #[error("checkpoint corruption in {path}: {what}")]
    Corrupt { path: PathBuf, what: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
