use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("file not found: {}", .0.display())]
    NotFound(PathBuf),

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("video {video_id}: instance {index}: {reason}")]
    InvalidInstance {
        video_id: String,
        index: usize,
        reason: String,
    },

    #[error("invalid annotation set: {0}")]
    InvalidAnnotations(String),

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { expected: u32, found: u32 },

    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("non-finite value at index {0}")]
    NonFinite(usize),

    #[error("infeasible configuration: {0}")]
    InfeasibleConfig(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("no ground-truth instances to evaluate against")]
    NoGroundTruth,

    #[error("non-finite loss {loss} on batch example {example}")]
    NonFiniteLoss { example: usize, loss: f64 },

    #[error("training diverged at epoch {epoch}, step {step}: loss = {loss}")]
    Divergence { epoch: usize, step: usize, loss: f64 },
}

impl Error {
    /// Short, stable identifier of the error variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::NotFound(_) => "not_found",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
            Error::InvalidInstance { .. } | Error::InvalidAnnotations(_) => "invalid_annotations",
            Error::BadMagic { .. } | Error::VersionMismatch { .. } | Error::Truncated { .. } | Error::NonFinite(_) => {
                "bad_file"
            }
            Error::InfeasibleConfig(_) => "config",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::ShapeMismatch(_) => "shape_mismatch",
            Error::NoGroundTruth => "no_ground_truth",
            Error::NonFiniteLoss { .. } | Error::Divergence { .. } => "divergence",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::NotFound(path)
        } else {
            Error::Io { path, source }
        }
    }
}
