use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid clip bounds: lower {lo} > upper {hi}")]
    InvalidBounds { lo: f64, hi: f64 },

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("non-finite value in {context} at step {step} (layer {layer})")]
    NonFinite {
        context: &'static str,
        step: usize,
        layer: String,
    },

    #[error("stage order violation: {0}")]
    StageOrder(String),

    #[error("fused layout corruption: {0}")]
    Corruption(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("config line {line}: {message}")]
    ConfigParse { line: usize, message: String },

    #[error("training diverged at step {step}: loss {loss}")]
    Diverged { step: usize, loss: f64 },

    #[error("gradient check failed for task {task}: error {error:.3e} exceeds bound {tolerance:.3e}")]
    GradientCheck { task: String, error: f64, tolerance: f64 },

    #[error("malformed block encoding: {0}")]
    Decode(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn dim(context: &'static str, expected: usize, got: usize) -> Self {
        Error::Dimension { context, expected, got }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
