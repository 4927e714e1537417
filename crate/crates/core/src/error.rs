use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the localization library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed map: {0}")]
    MalformedMap(String),

    #[error("invalid map metadata: {0}")]
    InvalidMeta(String),

    #[error("crop of {size} cells does not fit a {width}x{height} map")]
    CropTooLarge { size: usize, width: usize, height: usize },

    #[error("no free space available: {0}")]
    NoFreeSpace(String),

    #[error("unreachable waypoint after {0} attempts")]
    Unreachable(usize),

    #[error("stream too short: need {needed} samples, have {have}")]
    StreamTooShort { needed: usize, have: usize },

    #[error("kernel of {kh}x{kw} larger than {h}x{w} map")]
    KernelTooLarge { kh: usize, kw: usize, h: usize, w: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("unsupported op in graph: {0}")]
    UnsupportedOp(String),

    #[error("weights error: {0}")]
    Weights(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("zero total weight")]
    ZeroWeight,

    #[error("missing weights for the learned prior")]
    MissingWeights,

    #[error("stream mismatch: {0}")]
    StreamMismatch(String),

    #[error("start position is not connected to the location graph")]
    DisconnectedStart,

    #[error("no overlapping timestamps between trajectories")]
    NoOverlap,

    #[error("prior has zero mass over free cells")]
    ZeroMass,

    #[error("csv error: {0}")]
    Csv(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
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
