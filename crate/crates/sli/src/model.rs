//! Trained model bundle, its checkpoint layout and inference.

use std::path::Path;

use siftleak_core::{BinaryMap, DenseMap, FeatureMap, GrayImage, RgbImage};
use siftleak_grad::{checkpoint, Tensor};

use crate::error::{Result, SliError};
use crate::nets::{NetworkSpec, PatchGan, Role, UNet};

/// Whatever networks a training run produced, plus the settings needed to rebuild them.
#[derive(Debug, Clone)]
pub struct SliModel {
    pub seed: u64,
    pub step: u64,
    pub depth: usize,
    pub base_channels: usize,
    pub disc_channels: usize,
    pub g1: Option<UNet<f32>>,
    pub g2: Option<UNet<f32>>,
    pub g2p: Option<UNet<f32>>,
    pub d1: Option<PatchGan<f32>>,
    pub d2: Option<PatchGan<f32>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    /// LBP estimate (code / 255) for the feature-map path.
    pub lbp: Option<GrayImage>,
    pub image: RgbImage,
}

fn encode_u64(v: u64) -> Tensor<f32> {
    let parts = (0..4).map(|i| ((v >> (16 * i)) & 0xffff) as f32).collect();
    Tensor::new(&[4], parts).expect("four parts")
}

fn decode_u64(name: &str, tensors: &[(String, Tensor<f32>)]) -> Result<u64> {
    let Some((_, t)) = tensors.iter().find(|(n, _)| n == name) else {
        return Err(SliError::Format(format!("missing {name}")));
    };
    if t.numel() != 4 || t.data().iter().any(|&p| p < 0.0 || p > 65535.0 || p.fract() != 0.0) {
        return Err(SliError::Format(format!("malformed {name}")));
    }
    Ok(t.data().iter().enumerate().fold(0u64, |acc, (i, &p)| acc | ((p as u64) << (16 * i))))
}

fn to_planes(t: &Tensor<f32>) -> (usize, usize, usize, &[f32]) {
    let s = t.shape();
    (s[1], s[2], s[3], t.data())
}

pub fn feature_tensor(map: &FeatureMap) -> Tensor<f32> {
    Tensor::new(&[1, 128, map.height, map.width], map.to_planar()).expect("planar layout")
}

pub fn binary_tensor(map: &BinaryMap) -> Tensor<f32> {
    Tensor::new(&[1, 1, map.height, map.width], map.to_planar()).expect("planar layout")
}

pub fn image_tensor(img: &RgbImage) -> Tensor<f32> {
    Tensor::new(&[1, 3, img.height(), img.width()], img.to_planar()).expect("planar layout")
}

pub fn gray_tensor(img: &GrayImage) -> Tensor<f32> {
    Tensor::new(&[1, 1, img.height(), img.width()], img.data().to_vec()).expect("planar layout")
}

pub fn tensor_to_rgb(t: &Tensor<f32>) -> Result<RgbImage> {
    let (_, h, w, d) = to_planes(t);
    Ok(RgbImage::from_planar(h, w, d)?)
}

pub fn tensor_to_gray(t: &Tensor<f32>) -> Result<GrayImage> {
    let (_, h, w, d) = to_planes(t);
    Ok(GrayImage::new(h, w, d.to_vec())?)
}

impl SliModel {
    pub fn empty(seed: u64, depth: usize, base_channels: usize, disc_channels: usize) -> Self {
        Self { seed, step: 0, depth, base_channels, disc_channels, g1: None, g2: None, g2p: None, d1: None, d2: None }
    }

    pub fn generator_spec(&self, role: Role) -> NetworkSpec {
        NetworkSpec::for_role(role, self.depth, self.base_channels)
    }

    pub fn discriminator_spec(&self, role: Role) -> NetworkSpec {
        NetworkSpec::for_role(role, 0, self.disc_channels)
    }

    fn unets(&self) -> [(&'static str, Option<&UNet<f32>>); 3] {
        [("g1.", self.g1.as_ref()), ("g2.", self.g2.as_ref()), ("g2p.", self.g2p.as_ref())]
    }

    pub fn to_tensors(&self) -> Vec<(String, Tensor<f32>)> {
        let mut out = vec![
            ("meta.depth".to_string(), encode_u64(self.depth as u64)),
            ("meta.base_channels".to_string(), encode_u64(self.base_channels as u64)),
            ("meta.disc_channels".to_string(), encode_u64(self.disc_channels as u64)),
            ("meta.step".to_string(), encode_u64(self.step)),
            ("meta.seed".to_string(), encode_u64(self.seed)),
        ];
        for (prefix, net) in self.unets() {
            if let Some(n) = net {
                out.extend(n.params.named_f32(prefix));
            }
        }
        for (prefix, net) in [("d1.", self.d1.as_ref()), ("d2.", self.d2.as_ref())] {
            if let Some(n) = net {
                out.extend(n.params.named_f32(prefix));
            }
        }
        out
    }

    pub fn from_tensors(tensors: &[(String, Tensor<f32>)]) -> Result<Self> {
        let depth = decode_u64("meta.depth", tensors)? as usize;
        let base = decode_u64("meta.base_channels", tensors)? as usize;
        let disc = decode_u64("meta.disc_channels", tensors)? as usize;
        if depth == 0 || depth > 8 || base == 0 || disc == 0 {
            return Err(SliError::Format(format!("implausible architecture depth={depth} base={base} disc={disc}")));
        }
        let mut m = Self::empty(decode_u64("meta.seed", tensors)?, depth, base, disc);
        m.step = decode_u64("meta.step", tensors)?;
        let has = |prefix: &str| tensors.iter().any(|(n, _)| n.starts_with(prefix));
        let load_unet = |role: Role, prefix: &str| -> Result<Option<UNet<f32>>> {
            if !has(prefix) {
                return Ok(None);
            }
            let mut net = UNet::new(NetworkSpec::for_role(role, depth, base), 0)?;
            net.params.load_named_f32(prefix, tensors)?;
            Ok(Some(net))
        };
        let load_disc = |role: Role, prefix: &str| -> Result<Option<PatchGan<f32>>> {
            if !has(prefix) {
                return Ok(None);
            }
            let mut net = PatchGan::new(NetworkSpec::for_role(role, 0, disc), 0)?;
            net.params.load_named_f32(prefix, tensors)?;
            Ok(Some(net))
        };
        m.g1 = load_unet(Role::G1, "g1.")?;
        m.g2 = load_unet(Role::G2, "g2.")?;
        m.g2p = load_unet(Role::G2Prime, "g2p.")?;
        m.d1 = load_disc(Role::D1, "d1.")?;
        m.d2 = load_disc(Role::D2, "d2.")?;
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        Ok(checkpoint::save(path, &self.to_tensors())?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_tensors(&checkpoint::load(path)?)
    }

    /// G1 then G2 on `concat(S, L_o)`.
    pub fn reconstruct_features(&self, map: &FeatureMap) -> Result<Reconstruction> {
        let (Some(g1), Some(g2)) = (&self.g1, &self.g2) else {
            return Err(SliError::InvalidInput("model has no G1/G2 pair for feature maps".into()));
        };
        let s = feature_tensor(map);
        let lo = g1.infer(s.clone())?;
        let mut joined = s.into_data();
        joined.extend_from_slice(lo.data());
        let x = Tensor::new(&[1, 129, map.height, map.width], joined)?;
        let io = g2.infer(x)?;
        Ok(Reconstruction { lbp: Some(tensor_to_gray(&lo)?), image: tensor_to_rgb(&io)? })
    }

    /// LBP estimate from G1 alone.
    pub fn estimate_lbp(&self, map: &FeatureMap) -> Result<GrayImage> {
        let Some(g1) = &self.g1 else {
            return Err(SliError::InvalidInput("model has no G1".into()));
        };
        tensor_to_gray(&g1.infer(feature_tensor(map))?)
    }

    pub fn reconstruct_binary(&self, map: &BinaryMap) -> Result<Reconstruction> {
        let Some(g) = &self.g2p else {
            return Err(SliError::InvalidInput("model has no G2' for keypoint-location maps".into()));
        };
        Ok(Reconstruction { lbp: None, image: tensor_to_rgb(&g.infer(binary_tensor(map))?)? })
    }

    pub fn reconstruct(&self, map: &DenseMap) -> Result<Reconstruction> {
        match map {
            DenseMap::Features(f) => self.reconstruct_features(f),
            DenseMap::Binary(b) => self.reconstruct_binary(b),
        }
    }
}
