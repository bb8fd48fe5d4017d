//! Two-network SIFT inversion: G1 turns a dense SIFT map into an LBP
//! estimate, G2 turns the map plus that estimate into an RGB image. G2'
//! reconstructs from keypoint locations alone.

pub mod config;
mod error;
pub mod losses;
pub mod model;
pub mod nets;
pub mod train;

pub use config::{Stage, TrainConfig};
pub use error::{Result, SliError};
pub use losses::LossWeights;
pub use model::{Reconstruction, SliModel};
pub use nets::{NetworkSpec, PatchGan, PerceptNet, Role, UNet};
pub use train::{corpus_l1, initial_model, train, LogRow, TrainEvent, TrainItem, LOG_HEADER};
