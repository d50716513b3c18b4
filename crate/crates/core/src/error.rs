use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the profiling engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot decode {path}: {reason}")]
    Audio { path: PathBuf, reason: String },

    #[error("unsupported sample rate {rate} Hz in {path} (expected 16000)")]
    UnsupportedSampleRate { path: PathBuf, rate: u32 },

    #[error("zero variance in {label} labels")]
    ZeroVariance { label: &'static str },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("input too short: {len} samples, encoder needs at least {min}")]
    InputTooShort { len: usize, min: usize },

    #[error("manifest {path}, row {row}: {reason}")]
    Manifest {
        path: PathBuf,
        row: usize,
        reason: String,
    },

    #[error("manifest {path} is missing column `{column}`")]
    MissingColumn { path: PathBuf, column: String },

    #[error("sampler: {0}")]
    Sampler(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("config: {0}")]
    Config(String),

    #[error("not a checkpoint: {0}")]
    NotACheckpoint(String),

    #[error("checkpoint version {found} is not supported (expected {expected})")]
    CheckpointVersion { found: u32, expected: u32 },

    #[error("checkpoint truncated while reading {what}")]
    CheckpointTruncated { what: String },

    #[error("checkpoint parameter `{name}`: {reason}")]
    CheckpointShape { name: String, reason: String },

    #[error("empty input: {0}")]
    Empty(String),
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
