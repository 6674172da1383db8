use std::path::PathBuf;

use carosegd_core::Error as CoreError;

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("{0}")]
    Invalid(String),

    #[error("unknown item `{0}`")]
    UnknownItem(String),

    #[error("{0}")]
    NotFound(String),

    #[error("{0}")]
    WrongState(String),

    #[error("{0}")]
    RoiTooNarrow(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(CoreError),
}

impl From<CoreError> for GatewayError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::RoiTooNarrow { .. } => GatewayError::RoiTooNarrow(e.to_string()),
            CoreError::InvalidArgument(_)
            | CoreError::OutOfRange { .. }
            | CoreError::Malformed { .. }
            | CoreError::EmptyIntersection
            | CoreError::CrossingContours { .. } => GatewayError::Invalid(e.to_string()),
            other => GatewayError::Core(other),
        }
    }
}

impl GatewayError {
    /// Short machine-readable code used in HTTP error bodies.
    pub fn code(&self) -> &'static str {
        match self {
            GatewayError::Invalid(_) => "invalid",
            GatewayError::UnknownItem(_) | GatewayError::NotFound(_) => "not_found",
            GatewayError::WrongState(_) => "wrong_state",
            GatewayError::RoiTooNarrow(_) => "roi_too_narrow",
            GatewayError::Io { .. } => "io",
            GatewayError::Core(_) => "internal",
        }
    }

    pub fn http_status(&self) -> u16 {
        match self {
            GatewayError::Invalid(_) => 400,
            GatewayError::UnknownItem(_) | GatewayError::NotFound(_) => 404,
            GatewayError::WrongState(_) => 409,
            GatewayError::RoiTooNarrow(_) => 422,
            GatewayError::Io { .. } | GatewayError::Core(_) => 500,
        }
    }
}

pub type Result<T, E = GatewayError> = std::result::Result<T, E>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> GatewayError {
    let path = path.into();
    move |source| GatewayError::Io { path, source }
}
