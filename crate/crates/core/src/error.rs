use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("shape mismatch: {left} vs {right}")]
    ShapeMismatch { left: String, right: String },
    #[error("format error: {0}")]
    Format(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("image codec: {0}")]
    Image(#[from] image::ImageError),
}

impl Error {
    /// Filesystem failures, including those surfaced through the image codec.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io(_) | Error::Image(image::ImageError::IoError(_)))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn shape_err(a: (usize, usize), b: (usize, usize)) -> Error {
    Error::ShapeMismatch {
        left: format!("{}x{}", a.0, a.1),
        right: format!("{}x{}", b.0, b.1),
    }
}
