use thiserror::Error;

#[derive(Debug, Error)]
pub enum SliError {
    #[error(transparent)]
    Core(#[from] siftleak_core::Error),
    #[error(transparent)]
    Grad(#[from] siftleak_grad::GradError),
    #[error("shape: {0}")]
    Shape(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("checkpoint: {0}")]
    Format(String),
}

pub type Result<T, E = SliError> = std::result::Result<T, E>;
