//! Deterministic synthetic images for tests, demos and the toy training corpus.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::image::{GrayImage, RgbImage};

/// `rows x cols` grid of Gaussian blobs on a dark background. Returns the
/// image and the blob centers `(x, y)`.
pub fn blob_grid(size: usize, rows: usize, cols: usize, sigma: f32) -> (GrayImage, Vec<(f32, f32)>) {
    let mut centers = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let x = (c as f32 + 0.5) * size as f32 / cols as f32;
            let y = (r as f32 + 0.5) * size as f32 / rows as f32;
            centers.push((x.round(), y.round()));
        }
    }
    let img = GrayImage::from_fn(size, size, |x, y| {
        let v: f32 = centers
            .iter()
            .map(|&(cx, cy)| {
                let d2 = (x as f32 - cx).powi(2) + (y as f32 - cy).powi(2);
                (-d2 / (2.0 * sigma * sigma)).exp()
            })
            .sum();
        0.1 + 0.8 * v.min(1.0)
    });
    (img, centers)
}

struct Blob {
    x: f32,
    y: f32,
    sigma: f32,
    color: [f32; 3],
}

/// One colourful blob-and-gradient scene. Different `seed`s give unrelated scenes.
pub fn toy_image(size: usize, seed: u64) -> RgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base: [f32; 3] = std::array::from_fn(|_| rng.random_range(0.25..0.6));
    let tilt: [f32; 3] = std::array::from_fn(|_| rng.random_range(-0.25..0.25));
    let angle: f32 = rng.random_range(0.0..std::f32::consts::TAU);
    let (dir_y, dir_x) = angle.sin_cos();
    // Blobs sit on a jittered grid so neighbours rarely merge into one extremum.
    let margin = 8.0f32.min(size as f32 * 0.2);
    let cells = ((size as f32 - 2.0 * margin) / 9.0).floor().max(1.0) as usize;
    let pitch = (size as f32 - 2.0 * margin) / cells as f32;
    let blobs: Vec<Blob> = (0..cells * cells)
        .map(|i| {
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let amp: f32 = rng.random_range(0.35..0.6);
            let tint: [f32; 3] = std::array::from_fn(|_| rng.random_range(0.5..1.0));
            let jitter = pitch * 0.2;
            Blob {
                x: margin + ((i % cells) as f32 + 0.5) * pitch + rng.random_range(-jitter..jitter),
                y: margin + ((i / cells) as f32 + 0.5) * pitch + rng.random_range(-jitter..jitter),
                sigma: rng.random_range(1.8..3.0),
                color: tint.map(|t| sign * amp * t),
            }
        })
        .collect();
    RgbImage::from_fn(size, size, |x, y| {
        let u = (x as f32 * dir_x + y as f32 * dir_y) / size as f32;
        let mut px: [f32; 3] = std::array::from_fn(|c| base[c] + tilt[c] * u);
        for b in &blobs {
            let d2 = (x as f32 - b.x).powi(2) + (y as f32 - b.y).powi(2);
            let g = (-d2 / (2.0 * b.sigma * b.sigma)).exp();
            for c in 0..3 {
                px[c] += b.color[c] * g;
            }
        }
        px
    })
}

pub fn toy_corpus(count: usize, size: usize, seed: u64) -> Vec<RgbImage> {
    (0..count as u64).map(|i| toy_image(size, seed.wrapping_mul(1000).wrapping_add(i))).collect()
}
