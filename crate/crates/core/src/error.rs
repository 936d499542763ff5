use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected:?}, got {actual:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },

    #[error("invalid raster: {0}")]
    InvalidRaster(String),

    #[error("malformed run-length encoding: {0}")]
    MalformedRle(String),

    #[error("sketch has no ink pixels")]
    EmptyInk,

    /// No sampled point fell inside the instance mask.
    #[error("instance {0} is undersampled: no sample point lies inside its mask")]
    Undersampled(u32),

    #[error("no markers: no pixel carries an instance label")]
    NoMarkers,

    #[error("unknown instance id {0}")]
    UnknownId(u32),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate box {w}x{h}")]
    DegenerateBox { w: usize, h: usize },

    #[error("object library has no entry named {0:?}")]
    MissingKey(String),

    #[error("depth rank {0} used by more than one layout entry")]
    DuplicateRank(i64),

    #[error("rankings cover different id sets")]
    IdSetMismatch,

    #[error("inpainting backend: {0}")]
    Backend(String),

    #[error("image codec: {0}")]
    Image(String),

    #[error("document: {0}")]
    Document(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<image::ImageError> for Error {
    fn from(e: image::ImageError) -> Self {
        Error::Image(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Document(e.to_string())
    }
}
