//! 68-point facial landmarks, region labels and landmark-prior placement.

use std::ops::RangeInclusive;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use siftleak_core::{Descriptor, SiftFeatures};

use crate::error::{CoordError, Result};

pub const LANDMARK_COUNT: usize = 68;
pub const NUM_REGIONS: usize = 8;
pub const OTHER: usize = 7;
pub const MAX_LANDMARK_DISTANCE: f64 = 10.0;
pub const JITTER: i32 = 3;

/// Landmark index ranges of regions 0..=6 in the standard 68-point layout.
pub const REGIONS: [RangeInclusive<usize>; 7] = [0..=16, 17..=21, 22..=26, 27..=35, 36..=41, 42..=47, 48..=67];

pub const REGION_NAMES: [&str; NUM_REGIONS] =
    ["jaw", "right_brow", "left_brow", "nose", "right_eye", "left_eye", "mouth", "other"];

pub fn region_of(landmark: usize) -> usize {
    REGIONS.iter().position(|r| r.contains(&landmark)).expect("index below 68")
}

#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkSet {
    points: Vec<(f32, f32)>,
}

impl LandmarkSet {
    pub fn new(points: Vec<(f32, f32)>) -> Result<Self> {
        if points.len() != LANDMARK_COUNT {
            return Err(CoordError::InvalidInput(format!("expected {LANDMARK_COUNT} landmarks, got {}", points.len())));
        }
        if points.iter().any(|&(x, y)| !x.is_finite() || !y.is_finite()) {
            return Err(CoordError::InvalidInput("landmark coordinates must be finite".into()));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[(f32, f32)] {
        &self.points
    }

    /// Fails unless every point lies inside a `height x width` image.
    pub fn check_bounds(&self, height: usize, width: usize) -> Result<()> {
        if let Some((i, p)) = self
            .points
            .iter()
            .enumerate()
            .find(|(_, &(x, y))| x < 0.0 || y < 0.0 || x > (width - 1) as f32 || y > (height - 1) as f32)
        {
            return Err(CoordError::InvalidInput(format!("landmark {i} at {p:?} lies outside {height}x{width}")));
        }
        Ok(())
    }

    /// 68 lines of `x y`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut pts = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let vals: Vec<&str> = line.split_whitespace().collect();
            let [x, y] = vals[..] else {
                return Err(CoordError::Format(format!("landmark line {}: expected `x y`", n + 1)));
            };
            let parse = |s: &str| s.parse::<f32>().map_err(|_| CoordError::Format(format!("landmark line {}: bad number {s:?}", n + 1)));
            pts.push((parse(x)?, parse(y)?));
        }
        Self::new(pts)
    }

    pub fn to_text(&self) -> String {
        self.points.iter().map(|(x, y)| format!("{x} {y}\n")).collect()
    }
}

/// Region of the nearest landmark for each keypoint (lowest landmark index
/// on ties), or [`OTHER`] when that landmark is more than 10 px away.
pub fn label_descriptors(feats: &SiftFeatures, lm: &LandmarkSet) -> Vec<usize> {
    feats
        .keypoints
        .iter()
        .map(|kp| {
            let (mut best, mut best_d) = (0, f64::INFINITY);
            for (i, &(x, y)) in lm.points.iter().enumerate() {
                let d = f64::from(kp.x - x).hypot(f64::from(kp.y - y));
                if d < best_d {
                    best = i;
                    best_d = d;
                }
            }
            if best_d > MAX_LANDMARK_DISTANCE { OTHER } else { region_of(best) }
        })
        .collect()
}

/// Anything that maps a descriptor to one of the eight region labels.
pub trait DescriptorClassifier {
    fn predict(&self, d: &Descriptor) -> usize;
}

/// Places each descriptor at a random landmark of its predicted region,
/// jittered by an integer in [-3, 3] per component and clamped to the
/// image. Descriptors predicted as [`OTHER`] are dropped.
pub fn estimate_landmark(
    query: &SiftFeatures,
    clf: &impl DescriptorClassifier,
    prior: &LandmarkSet,
    seed: u64,
) -> Result<SiftFeatures> {
    if query.height == 0 || query.width == 0 {
        return Err(CoordError::InvalidInput("query image size is zero".into()));
    }
    prior.check_bounds(query.height, query.width)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let members: Vec<Vec<usize>> = REGIONS.iter().map(|r| r.clone().collect()).collect();
    let mut keep = Vec::new();
    let mut coords = Vec::new();
    for (i, d) in query.descriptors.iter().enumerate() {
        let c = clf.predict(d);
        if c >= OTHER {
            continue;
        }
        let li = *members[c].choose(&mut rng).expect("regions are non-empty");
        let (x, y) = prior.points[li];
        let ex = rng.random_range(-JITTER..=JITTER) as f32;
        let ey = rng.random_range(-JITTER..=JITTER) as f32;
        let cx = (x + ex).clamp(0.0, (query.width - 1) as f32);
        let cy = (y + ey).clamp(0.0, (query.height - 1) as f32);
        keep.push(i);
        coords.push((cx, cy));
    }
    let mut out = query.select(&keep);
    for (kp, (x, y)) in out.keypoints.iter_mut().zip(coords) {
        kp.x = x;
        kp.y = y;
    }
    Ok(out)
}
