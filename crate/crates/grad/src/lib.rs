//! Dense tensors, a reverse-mode tape, parameter sets and Adam.

pub mod check;
pub mod checkpoint;
mod error;
mod init;
mod optim;
mod params;
mod scalar;
mod tape;
mod tensor;

pub use error::{GradError, Result};
pub use init::he_normal;
pub use optim::{Adam, AdamConfig};
pub use params::{Bound, ParamId, ParamSet};
pub use scalar::Real;
pub use tape::{softmax_rows, BatchStats, ConvGeom, Gradients, Tape, Var};
pub use tensor::Tensor;
