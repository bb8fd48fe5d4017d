//! Coordinate recovery for SIFT descriptors whose keypoint locations are
//! missing: nearest-neighbour lookup in a reference corpus, or region
//! classification against a facial landmark prior.

pub mod classifier;
mod error;
pub mod landmarks;
pub mod reference;

pub use classifier::{train_region_classifier, ClassifierConfig, RegionClassifier};
pub use error::{CoordError, Result};
pub use landmarks::{estimate_landmark, label_descriptors, DescriptorClassifier, LandmarkSet};
pub use reference::{
    build_reference_set, estimate_descriptor_level, estimate_image_level, ReferenceEntry, ReferenceSet,
};
