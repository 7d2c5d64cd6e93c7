use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised across the alignment pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid camera intrinsics: {0}")]
    InvalidIntrinsics(String),

    #[error("invalid geocentric frame: {0}")]
    InvalidFrame(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("image dimensions differ: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),

    #[error("mask contains no pixel with valid depth")]
    EmptyMask,

    #[error("zero-area box")]
    EmptyBox,

    #[error("mesh has zero top-view footprint")]
    ZeroFootprint,

    #[error("rejection sampling gave up after {0} tries")]
    SamplingFailed(usize),

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("unknown category `{0}`")]
    UnknownCategory(String),

    #[error("unknown model `{0}`")]
    UnknownModel(String),

    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("training data contains a single class")]
    SingleClass,

    #[error("every candidate failed to align")]
    AllCandidatesFailed,

    #[error("no ground truth instances; average precision is undefined")]
    NoGroundTruth,

    #[error("malformed file {path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format { path: path.into(), msg: msg.into() }
    }
}
