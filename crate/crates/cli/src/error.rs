use siftleak_coord::CoordError;
use siftleak_grad::GradError;
use siftleak_sli::SliError;
use thiserror::Error;

/// Failure classes, each with its own process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Format(String),
    #[error("{0}")]
    Shape(String),
    #[error("{0}")]
    InvalidParameter(String),
    #[error("{0}")]
    Degenerate(String),
    #[error("{0}")]
    InvalidInput(String),
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Io(_) => 3,
            CliError::Format(_) => 4,
            CliError::Shape(_) => 5,
            CliError::InvalidParameter(_) => 6,
            CliError::Degenerate(_) => 7,
            CliError::InvalidInput(_) => 8,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<siftleak_core::Error> for CliError {
    fn from(e: siftleak_core::Error) -> Self {
        use siftleak_core::Error as E;
        let msg = e.to_string();
        if e.is_io() {
            return CliError::Io(msg);
        }
        match e {
            E::InvalidParameter(_) => CliError::InvalidParameter(msg),
            E::InvalidInput(_) => CliError::InvalidInput(msg),
            E::ShapeMismatch { .. } => CliError::Shape(msg),
            E::Format(_) => CliError::Format(msg),
            E::Degenerate(_) => CliError::Degenerate(msg),
            E::Io(_) => CliError::Io(msg),
            E::Image(_) => CliError::Format(msg),
        }
    }
}

impl From<GradError> for CliError {
    fn from(e: GradError) -> Self {
        let msg = e.to_string();
        match e {
            GradError::Shape { .. } => CliError::Shape(msg),
            GradError::InvalidParameter(_) => CliError::InvalidParameter(msg),
            GradError::Format(_) => CliError::Format(msg),
            GradError::Io(_) => CliError::Io(msg),
        }
    }
}

impl From<SliError> for CliError {
    fn from(e: SliError) -> Self {
        let msg = e.to_string();
        match e {
            SliError::Core(e) => e.into(),
            SliError::Grad(e) => e.into(),
            SliError::Shape(_) => CliError::Shape(msg),
            SliError::InvalidParameter(_) => CliError::InvalidParameter(msg),
            SliError::InvalidInput(_) => CliError::InvalidInput(msg),
            SliError::Format(_) => CliError::Format(msg),
        }
    }
}

impl From<CoordError> for CliError {
    fn from(e: CoordError) -> Self {
        let msg = e.to_string();
        match e {
            CoordError::Core(e) => e.into(),
            CoordError::Grad(e) => e.into(),
            CoordError::InvalidInput(_) => CliError::InvalidInput(msg),
            CoordError::InvalidParameter(_) => CliError::InvalidParameter(msg),
            CoordError::Degenerate(_) => CliError::Degenerate(msg),
            CoordError::Format(_) => CliError::Format(msg),
            CoordError::Io(_) => CliError::Io(msg),
        }
    }
}
