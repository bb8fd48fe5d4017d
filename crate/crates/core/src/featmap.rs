//! Dense model inputs built from sparse SIFT features.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::sift::{SiftFeatures, DESCRIPTOR_LEN};

/// `height x width x 128`, pixel-major: the 128 channels of a pixel are contiguous.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub height: usize,
    pub width: usize,
    data: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMap {
    pub height: usize,
    pub width: usize,
    data: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DenseMap {
    Features(FeatureMap),
    Binary(BinaryMap),
}

impl FeatureMap {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self { height, width, data: vec![0.0; height * width * DESCRIPTOR_LEN] }
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[f32] {
        let i = (y * self.width + x) * DESCRIPTOR_LEN;
        &self.data[i..i + DESCRIPTOR_LEN]
    }

    pub fn is_occupied(&self, x: usize, y: usize) -> bool {
        self.pixel(x, y).iter().any(|&v| v != 0.0)
    }

    pub fn occupied_count(&self) -> usize {
        self.data.chunks_exact(DESCRIPTOR_LEN).filter(|p| p.iter().any(|&v| v != 0.0)).count()
    }

    /// Channel-major `128 x H x W` copy for the networks.
    pub fn to_planar(&self) -> Vec<f32> {
        let n = self.height * self.width;
        let mut out = vec![0.0; DESCRIPTOR_LEN * n];
        for (i, px) in self.data.chunks_exact(DESCRIPTOR_LEN).enumerate() {
            if px.iter().all(|&v| v == 0.0) {
                continue;
            }
            for (c, &v) in px.iter().enumerate() {
                out[c * n + i] = v;
            }
        }
        out
    }
}

impl BinaryMap {
    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    pub fn ones(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }

    pub fn to_planar(&self) -> Vec<f32> {
        self.data.iter().map(|&v| f32::from(v)).collect()
    }
}

/// Round-half-up pixel index of every keypoint, validated against the image bounds.
fn pixel_coords(feats: &SiftFeatures) -> Result<Vec<(usize, usize)>> {
    let (h, w) = (feats.height, feats.width);
    feats
        .keypoints
        .iter()
        .enumerate()
        .map(|(i, kp)| {
            let ok = kp.x.is_finite() && kp.y.is_finite() && kp.x >= 0.0 && kp.y >= 0.0;
            if !ok || kp.x >= w as f32 || kp.y >= h as f32 {
                return Err(Error::InvalidInput(format!(
                    "keypoint {i} at ({}, {}) outside {h}x{w}",
                    kp.x, kp.y
                )));
            }
            let px = ((kp.x + 0.5).floor() as usize).min(w - 1);
            let py = ((kp.y + 0.5).floor() as usize).min(h - 1);
            Ok((px, py))
        })
        .collect()
}

/// Index of the keypoint that owns each occupied pixel.
///
/// The largest `|response|` wins; ties go to the smaller scale, then smaller
/// `(y, x)`, then the earlier index. Scale order equals `(octave, level)`
/// order for detector output.
pub fn pixel_owners(feats: &SiftFeatures) -> Result<Vec<((usize, usize), usize)>> {
    let coords = pixel_coords(feats)?;
    let mut owner: std::collections::BTreeMap<(usize, usize), usize> = Default::default();
    let better = |a: usize, b: usize| -> bool {
        let (ka, kb) = (&feats.keypoints[a], &feats.keypoints[b]);
        let ra = ka.response.abs();
        let rb = kb.response.abs();
        if ra != rb {
            return ra > rb;
        }
        (ka.sigma, ka.y, ka.x, a) < (kb.sigma, kb.y, kb.x, b)
    };
    for (i, &(x, y)) in coords.iter().enumerate() {
        owner
            .entry((y, x))
            .and_modify(|cur| {
                if better(i, *cur) {
                    *cur = i;
                }
            })
            .or_insert(i);
    }
    Ok(owner.into_iter().map(|((y, x), i)| ((x, y), i)).collect())
}

pub fn build_feature_map(feats: &SiftFeatures) -> Result<FeatureMap> {
    let mut map = FeatureMap::zeros(feats.height, feats.width);
    for ((x, y), i) in pixel_owners(feats)? {
        let at = (y * feats.width + x) * DESCRIPTOR_LEN;
        map.data[at..at + DESCRIPTOR_LEN].copy_from_slice(feats.descriptors[i].as_slice());
    }
    Ok(map)
}

pub fn build_binary_map(feats: &SiftFeatures) -> Result<BinaryMap> {
    let mut data = vec![0u8; feats.height * feats.width];
    for (x, y) in pixel_coords(feats)? {
        data[y * feats.width + x] = 1;
    }
    Ok(BinaryMap { height: feats.height, width: feats.width, data })
}

/// Uniform random subset of `round(fraction * n)` keypoints, kept in original order.
pub fn subsample_features(feats: &SiftFeatures, fraction: f64, seed: u64) -> Result<SiftFeatures> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidParameter(format!("fraction must lie in (0, 1], got {fraction}")));
    }
    let n = feats.len();
    let keep = ((fraction * n as f64).round() as usize).min(n);
    if keep == n {
        return Ok(feats.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, n, keep).into_vec();
    idx.sort_unstable();
    Ok(feats.select(&idx))
}

const MAGIC: &[u8; 4] = b"SMP1";

impl DenseMap {
    pub fn dims(&self) -> (usize, usize) {
        match self {
            DenseMap::Features(m) => (m.height, m.width),
            DenseMap::Binary(m) => (m.height, m.width),
        }
    }

    pub fn channels(&self) -> usize {
        match self {
            DenseMap::Features(_) => DESCRIPTOR_LEN,
            DenseMap::Binary(_) => 1,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let (h, w) = self.dims();
        let c = self.channels();
        let mut buf = Vec::with_capacity(16 + h * w * c * 4);
        buf.extend_from_slice(MAGIC);
        for v in [h, w, c] {
            buf.extend_from_slice(&(v as u32).to_le_bytes());
        }
        match self {
            DenseMap::Features(m) => m.data.iter().for_each(|v| buf.extend_from_slice(&v.to_le_bytes())),
            DenseMap::Binary(m) => {
                m.data.iter().for_each(|&v| buf.extend_from_slice(&f32::from(v).to_le_bytes()))
            }
        }
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..4] != MAGIC {
            return Err(Error::Format("missing SMP1 header".into()));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
        let (h, w, c) = (word(4), word(8), word(12));
        if c != 1 && c != DESCRIPTOR_LEN {
            return Err(Error::Format(format!("SMP1 channel count {c} is neither 1 nor 128")));
        }
        let expected = h.checked_mul(w).and_then(|v| v.checked_mul(c)).and_then(|v| v.checked_mul(4));
        if expected.map(|e| e + 16) != Some(bytes.len()) {
            return Err(Error::Format(format!(
                "SMP1 payload of {} bytes does not match {h}x{w}x{c}",
                bytes.len()
            )));
        }
        let values = bytes[16..].chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap()));
        if c == 1 {
            let data = values
                .map(|v| match v {
                    v if v == 0.0 => Ok(0u8),
                    v if v == 1.0 => Ok(1u8),
                    v => Err(Error::Format(format!("binary map value {v} is not 0 or 1"))),
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(DenseMap::Binary(BinaryMap { height: h, width: w, data }))
        } else {
            Ok(DenseMap::Features(FeatureMap { height: h, width: w, data: values.collect() }))
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
