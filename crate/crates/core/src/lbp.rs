//! 3x3 local binary patterns.
//!
//! Neighbours are read row-major from the top-left, skipping the center; the
//! first neighbour is the most significant bit. A bit is set only when the
//! neighbour is strictly brighter than the center. Borders replicate.

use std::path::Path;

use crate::error::{Error, Result};
use crate::image::GrayImage;

const OFFSETS: [(isize, isize); 8] = [(-1, -1), (0, -1), (1, -1), (-1, 0), (1, 0), (-1, 1), (0, 1), (1, 1)];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LbpMap {
    height: usize,
    width: usize,
    codes: Vec<u8>,
}

impl LbpMap {
    pub fn new(height: usize, width: usize, codes: Vec<u8>) -> Result<Self> {
        if codes.len() != height * width {
            return Err(Error::InvalidInput(format!(
                "expected {} codes for {height}x{width}, got {}",
                height * width,
                codes.len()
            )));
        }
        Ok(Self { height, width, codes })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn codes(&self) -> &[u8] {
        &self.codes
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.codes[y * self.width + x]
    }

    /// Writes the codes as an 8-bit grayscale PNG/PGM.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let buf = image::GrayImage::from_raw(self.width as u32, self.height as u32, self.codes.clone())
            .expect("buffer length matches dimensions");
        buf.save(path)?;
        Ok(())
    }
}

/// Packs eight neighbour comparisons against `center`, MSB first.
pub fn pack_bits(neighbors: [f32; 8], center: f32) -> u8 {
    neighbors.iter().fold(0u8, |code, &n| (code << 1) | u8::from(n > center))
}

pub fn lbp_code(img: &GrayImage, x: usize, y: usize) -> u8 {
    let center = img.get(x, y);
    let neighbors = OFFSETS.map(|(dx, dy)| img.get_clamped(x as isize + dx, y as isize + dy));
    pack_bits(neighbors, center)
}

pub fn extract_lbp(img: &GrayImage) -> LbpMap {
    let (h, w) = img.dims();
    let mut codes = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            codes.push(lbp_code(img, x, y));
        }
    }
    LbpMap { height: h, width: w, codes }
}

/// Code / 255 as intensity.
pub fn lbp_to_image(map: &LbpMap) -> GrayImage {
    GrayImage::new(map.height, map.width, map.codes.iter().map(|&c| f32::from(c) / 255.0).collect())
        .expect("codes map into [0,1]")
}

/// Inverse of [`lbp_to_image`] by rounding.
pub fn image_to_lbp(img: &GrayImage) -> LbpMap {
    let (h, w) = img.dims();
    LbpMap { height: h, width: w, codes: img.data().iter().map(|&v| crate::image::quantize(v)).collect() }
}
