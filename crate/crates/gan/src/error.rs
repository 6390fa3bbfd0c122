use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GanError {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("training diverged at epoch {epoch}, step {step}: {what} is not finite")]
    Diverged { epoch: usize, step: usize, what: &'static str },

    #[error("checkpoint {path}: {detail}")]
    Checkpoint { path: PathBuf, detail: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Data(#[from] firecast_core::Error),
}

pub type Result<T, E = GanError> = std::result::Result<T, E>;

impl GanError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        GanError::Io {
            path: path.into(),
            source,
        }
    }
}
