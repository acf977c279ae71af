use std::path::PathBuf;

/// Errors raised by the laboratory.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("grid resolution {0} must be a power of two and at least 8")]
    BadResolution(usize),

    #[error("box length must be positive and finite, got {0}")]
    BadLength(f64),

    #[error("field has {actual} samples, expected {expected}")]
    ShapeMismatch { expected: usize, actual: usize },

    #[error("fields live on different grids")]
    GridMismatch,

    #[error("field contains a non-finite sample")]
    NonFinite,

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("mollifier radius {epsilon} is not resolved: it must exceed twice the grid spacing {spacing}")]
    UnresolvedMollifier { epsilon: f64, spacing: f64 },

    #[error("kernel evaluated at the origin")]
    KernelAtOrigin,

    #[error("stress is not compactly supported: magnitude above {threshold:e} of peak extends to radius {radius:.4}, limit {limit:.4}")]
    NotCompactlySupported {
        radius: f64,
        limit: f64,
        threshold: f64,
    },

    #[error("{path}: {message}")]
    Config { path: String, message: String },

    #[error("checkpoint {path:?}: {message}")]
    Checkpoint { path: PathBuf, message: String },

    #[error("integration failed at t = {t}: {reason}")]
    Integration { t: f64, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
