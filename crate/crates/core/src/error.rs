use std::path::PathBuf;

use thiserror::Error;

use crate::volume::Dims;

pub type Result<T, E = TdvError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum TdvError {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: Dims, actual: Dims },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value in iterate at iteration {iteration}")]
    NumericalFailure { iteration: usize },

    #[error("power iteration did not converge after {iterations} iterations (last relative change {change:.3e})")]
    NoConvergence { iterations: usize, change: f64 },

    #[error(transparent)]
    Video(#[from] VideoError),
}

/// Failures while decoding or encoding video containers.
#[derive(Debug, Error)]
pub enum VideoError {
    #[error("file not found: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("malformed header in {}: {reason}", .path.display())]
    MalformedHeader { path: PathBuf, reason: String },

    #[error("frame {frame}: {reason}")]
    InconsistentFrame { frame: usize, reason: String },

    #[error("frame {frame}: payload truncated")]
    Truncated { frame: usize },

    #[error("unsupported format: {0}")]
    Unsupported(String),

    #[error("i/o error on {}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl TdvError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        TdvError::InvalidArgument(msg.into())
    }
}
