use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("label tracks disagree at transition {index}: {detail}")]
    Alignment { index: usize, detail: String },

    #[error("segment {segment} has {len} frames, fewer than required ({required})")]
    SegmentTooShort { segment: usize, len: usize, required: usize },

    #[error("invalid dataset split: {0}")]
    Split(String),

    #[error("need at least {required} frames to form a window, got {got}")]
    Window { required: usize, got: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("region of interest {0} is outside the frame or empty")]
    Roi(String),

    #[error("window starting at frame {start} has a corrupted mask")]
    CorruptedWindow { start: usize },

    #[error("cannot transfer weights: {0}")]
    Transfer(String),

    #[error("class index {0} out of range")]
    Class(usize),

    #[error("data error: {0}")]
    Data(String),

    #[error("training diverged at epoch {epoch} (loss is {loss})")]
    Divergence { epoch: usize, loss: f64 },

    #[error("stage `{stage}` has not produced {missing}; run it first")]
    Pipeline { stage: String, missing: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io { path: path.into(), source }
    }

    /// Process exit status for command-line use: 2 configuration, 3 data,
    /// 4 numerical divergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) | Self::Class(_) | Self::Roi(_) => 2,
            Self::Divergence { .. } => 4,
            _ => 3,
        }
    }
}
