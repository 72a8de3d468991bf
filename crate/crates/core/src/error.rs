use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected:?}, got {actual:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },

    #[error("seed mask is empty")]
    EmptySeed,

    #[error("mask is empty")]
    EmptyMask,

    #[error("seed regions overlap at pixel ({row}, {col})")]
    OverlappingSeeds { row: usize, col: usize },

    #[error("invalid configuration key `{key}`: {reason}")]
    Config { key: String, reason: String },

    #[error("invalid network: {0}")]
    Network(String),

    #[error("image size {height}x{width} is not divisible by {divisor}")]
    Indivisible {
        height: usize,
        width: usize,
        divisor: usize,
    },

    #[error("crop of {crop} pixels does not fit in a {height}x{width} image")]
    CropTooLarge {
        crop: usize,
        height: usize,
        width: usize,
    },

    #[error("non-finite {what} at step {step}")]
    NonFinite { what: &'static str, step: u64 },

    #[error("dataset: {0}")]
    Dataset(String),

    #[error("checksum mismatch for {path}: expected {expected:016x}, found {found:016x}")]
    Checksum {
        path: PathBuf,
        expected: u64,
        found: u64,
    },

    #[error("malformed {what} in {path}: {reason}")]
    Format {
        what: &'static str,
        path: PathBuf,
        reason: String,
    },

    #[error("scene placement failed after {attempts} attempts")]
    Placement { attempts: usize },

    #[error("instance of {area} pixels is too small to shrink")]
    InstanceTooSmall { area: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            reason: reason.into(),
        }
    }

    /// Process exit code: 2 for configuration errors, 3 for data errors,
    /// 4 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } | Error::Network(_) | Error::Indivisible { .. } => 2,
            Error::CropTooLarge { .. } => 2,
            Error::NonFinite { .. } => 4,
            _ => 3,
        }
    }
}
