use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = CocaError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CocaError {
    #[error("matrix is singular (pivot magnitude {pivot:e} at column {column})")]
    SingularMatrix { column: usize, pivot: f64 },

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },

    #[error("tape was recorded against params version {tape}, params are at version {params}")]
    MissingTape { tape: u64, params: u64 },

    #[error("{}: bad magic number {found:#010x}, expected {expected:#010x}", path.display())]
    BadMagic {
        path: PathBuf,
        expected: u32,
        found: u32,
    },

    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },

    #[error("{}: file truncated ({detail})", path.display())]
    TruncatedFile { path: PathBuf, detail: String },

    #[error("dataset has no samples of class {0}")]
    MissingClass(usize),

    #[error("{classes} classes cannot be split evenly into {tasks} tasks")]
    IndivisibleSplit { classes: usize, tasks: usize },

    #[error("replay buffer is empty")]
    EmptyBuffer,

    #[error("index {index} out of range for batch of {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("similarity needs at least 2 samples, got {0}")]
    BatchTooSmall(usize),

    #[error("omega must lie in [0, 1), got {0}")]
    OmegaOutOfRange(f64),

    #[error("temperature must be positive, got {0}")]
    BadTemperature(f64),

    #[error("task-il evaluation needs task ids on every test sample")]
    MissingTaskIds,

    #[error("training diverged at step {step}: {what} is not finite (try a smaller learning rate)")]
    NonFinite { step: usize, what: String },

    #[error("config error at `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("io error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl CocaError {
    pub(crate) fn shape(expected: impl Into<String>, actual: impl Into<String>) -> Self {
        CocaError::ShapeMismatch {
            expected: expected.into(),
            actual: actual.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CocaError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        CocaError::Config {
            key: key.into(),
            message: message.into(),
        }
    }
}
