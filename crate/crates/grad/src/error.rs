use thiserror::Error;

#[derive(Debug, Error)]
pub enum GradError {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    Shape { op: &'static str, left: Vec<usize>, right: Vec<usize> },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("checkpoint format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = GradError> = std::result::Result<T, E>;

pub(crate) fn shape(op: &'static str, left: &[usize], right: &[usize]) -> GradError {
    GradError::Shape { op, left: left.to_vec(), right: right.to_vec() }
}
