use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value {value} at pixel ({row}, {col})")]
    NonFinite { row: usize, col: usize, value: f32 },

    #[error("grid mismatch: expected {expected}, got {actual}")]
    GridMismatch { expected: String, actual: String },

    #[error("resolution ratio {0} is not an integer")]
    NonIntegerRatio(f64),

    #[error("target grid {target_rows}x{target_cols} is smaller than input {rows}x{cols}")]
    TargetTooSmall {
        rows: usize,
        cols: usize,
        target_rows: usize,
        target_cols: usize,
    },

    #[error("field kind {actual:?} not accepted here (expected {expected})")]
    WrongKind {
        expected: &'static str,
        actual: crate::FieldKind,
    },

    #[error("field violates its invariant: {0}")]
    Invariant(String),

    #[error("arrival field has no burned pixels")]
    NothingBurned,

    #[error("fire too small to observe: max arrival {0:.3} h <= 2.1 h")]
    FireTooSmall(f64),

    #[error("unknown fuel category {0}")]
    UnknownFuel(u8),

    #[error("crop falls outside the source grid")]
    CropOutOfBounds,

    #[error("ensemble needs at least 2 samples, got {0}")]
    TooFewSamples(usize),

    #[error("no high-confidence GOES detection within +/-{window_hours} h of the start hint")]
    IgnitionNotFound { window_hours: f64 },

    #[error("reference perimeter does not overlap the prediction domain")]
    PerimeterOutsideDomain,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("malformed {what}: {detail}")]
    Parse { what: &'static str, detail: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
