use std::path::PathBuf;

/// Errors produced by the segmentation engine.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("query abscissa {x} outside knot span [{lo}, {hi}]")]
    OutOfRange { x: f64, lo: f64, hi: f64 },

    #[error("ROI is {width} px wide, at least {min} px are required; widen the ROI")]
    RoiTooNarrow { width: usize, min: usize },

    #[error("no 512-row patch can be placed at abscissa {x}: {reason}")]
    PatchUnplaceable { x: usize, reason: String },

    #[error("patch spec #{index} lies outside the {height}x{width} image")]
    SpecOutOfBounds { index: usize, height: usize, width: usize },

    #[error("contours cross at column {column}")]
    CrossingContours { column: usize },

    #[error("contours share no abscissa")]
    EmptyIntersection,

    #[error("segmentation map is empty")]
    NoRegion,

    #[error("shape mismatch in {context}: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        context: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("weight file has bad magic bytes {0:?}")]
    BadMagic([u8; 4]),

    #[error("unsupported weight format version {0}")]
    UnsupportedVersion(u32),

    #[error("weight file truncated: {0}")]
    Truncated(String),

    #[error("weight file checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    ChecksumMismatch { stored: u32, computed: u32 },

    #[error("weight file has no layers")]
    NoLayers,

    #[error("missing layer `{0}`")]
    MissingLayer(String),

    #[error("predictor output invalid: {0}")]
    InvalidPrediction(String),

    #[error("malformed {what} in {path}: {reason}")]
    Malformed {
        what: &'static str,
        path: PathBuf,
        reason: String,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image decoding failed: {0}")]
    Image(#[from] image::ImageError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
    let path = path.into();
    move |source| Error::Io { path, source }
}
