//! Image plumbing, SIFT and LBP extraction, dense feature maps and leakage
//! metrics for SIFT feature-inversion experiments.

pub mod error;
pub mod featmap;
pub mod image;
pub mod lbp;
pub mod metrics;
pub mod sift;
pub mod synth;

pub use error::{Error, Result};
pub use featmap::{build_binary_map, build_feature_map, subsample_features, BinaryMap, DenseMap, FeatureMap};
pub use image::{to_grayscale, GrayImage, Kernel, RgbImage};
pub use lbp::{extract_lbp, lbp_code, lbp_to_image, LbpMap};
pub use metrics::{evaluate_reconstruction, prm, psnr, ssim, EvalRecord, PrmReport};
pub use sift::{extract_sift, match_descriptors, Descriptor, Keypoint, SiftFeatures, SiftParams};
