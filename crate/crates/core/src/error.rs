use std::path::PathBuf;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("bad file format in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("flow provider failed on pair ({i}, {j}): {reason}")]
    Provider { i: usize, j: usize, reason: String },

    #[error("resolution mismatch: expected {expected:?}, got {got:?}")]
    Resolution {
        expected: (usize, usize),
        got: (usize, usize),
    },

    #[error("frame pair mismatch: {0}")]
    PairMismatch(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite value in {context} (coupling layer {layer})")]
    NonFinite { context: String, layer: usize },

    #[error("empty correspondence set: nothing to optimize")]
    EmptyCorrespondences,

    #[error("training aborted at step {step}: {reason}")]
    TrainingAborted { step: usize, reason: String },

    #[error("invalid scene spec: {0}")]
    SceneSpec(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid config: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
