use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A precondition on an argument or configuration value was violated.
    #[error("domain error: {0}")]
    Domain(String),

    /// A privacy calibration was requested outside the range where the
    /// closed-form Gaussian bound holds (per-step epsilon must be < 1).
    #[error("out of regime: {0}")]
    OutOfRegime(String),

    /// A forward pass produced a non-finite pre-activation.
    #[error("non-finite activation in layer {layer}")]
    Overflow { layer: usize },

    /// A gradient (or the update built from it) stopped being finite.
    #[error("gradient explosion at step {step}: {detail}")]
    Explosion { step: u64, detail: String },

    #[error("{path}: row {row}: {message}")]
    Parse {
        path: PathBuf,
        row: usize,
        message: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
