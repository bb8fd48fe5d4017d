//! Pixel rasters, Gaussian kernels and replicate-padded 2-D convolution.
//!
//! Intensities live in `[0, 1]` as `f32`. Conversion to 8 bits happens only
//! when reading or writing files.

use std::path::Path;

use crate::error::{shape_err, Error, Result};

/// Single-channel raster with intensities in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

/// Three-channel raster with interleaved RGB intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

fn check_range(data: &[f32]) -> Result<()> {
    match data.iter().position(|v| !(0.0..=1.0).contains(v)) {
        Some(i) => Err(Error::InvalidInput(format!(
            "pixel value {} at index {i} outside [0,1]",
            data[i]
        ))),
        None => Ok(()),
    }
}

impl GrayImage {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::InvalidInput(format!(
                "expected {} pixels for {height}x{width}, got {}",
                height * width,
                data.len()
            )));
        }
        check_range(&data)?;
        Ok(Self { height, width, data })
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Self {
        Self { height, width, data: vec![value.clamp(0.0, 1.0); height * width] }
    }

    /// Builds an image by evaluating `f(x, y)`; results are clamped to `[0, 1]`.
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y).clamp(0.0, 1.0));
            }
        }
        Self { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    /// Pixel lookup with replicate padding.
    pub fn get_clamped(&self, x: isize, y: isize) -> f32 {
        let xc = x.clamp(0, self.width as isize - 1) as usize;
        let yc = y.clamp(0, self.height as isize - 1) as usize;
        self.data[yc * self.width + xc]
    }

    /// Applies `f` per pixel; results are clamped back into `[0, 1]`.
    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Self {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v).clamp(0.0, 1.0)).collect(),
        }
    }

    /// Keeps every second row and column.
    pub fn downsample2(&self) -> Self {
        let h = self.height.div_ceil(2);
        let w = self.width.div_ceil(2);
        Self::from_fn(h, w, |x, y| self.get(2 * x, 2 * y))
    }

    pub fn to_plane(&self) -> Plane {
        Plane { height: self.height, width: self.width, data: self.data.clone() }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let img = image::open(path)?.into_luma8();
        let (w, h) = img.dimensions();
        let data = img.into_raw().into_iter().map(|v| f32::from(v) / 255.0).collect();
        Ok(Self { height: h as usize, width: w as usize, data })
    }

    /// Writes an 8-bit PNG or PGM, chosen from the file extension.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let buf = image::GrayImage::from_raw(
            self.width as u32,
            self.height as u32,
            self.data.iter().map(|&v| quantize(v)).collect(),
        )
        .expect("buffer length matches dimensions");
        buf.save(path)?;
        Ok(())
    }
}

impl RgbImage {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width * 3 {
            return Err(Error::InvalidInput(format!(
                "expected {} values for {height}x{width}x3, got {}",
                height * width * 3,
                data.len()
            )));
        }
        check_range(&data)?;
        Ok(Self { height, width, data })
    }

    /// Builds an image by evaluating `f(x, y) -> [r, g, b]`, clamped to `[0, 1]`.
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> [f32; 3]) -> Self {
        let mut data = Vec::with_capacity(height * width * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend(f(x, y).iter().map(|v| v.clamp(0.0, 1.0)));
            }
        }
        Self { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Planar `[R..., G..., B...]` layout, as consumed by the networks.
    pub fn to_planar(&self) -> Vec<f32> {
        let n = self.height * self.width;
        let mut out = vec![0.0; 3 * n];
        for (i, px) in self.data.chunks_exact(3).enumerate() {
            for c in 0..3 {
                out[c * n + i] = px[c];
            }
        }
        out
    }

    /// Inverse of [`RgbImage::to_planar`]; values are clamped into `[0, 1]`.
    pub fn from_planar(height: usize, width: usize, planar: &[f32]) -> Result<Self> {
        let n = height * width;
        if planar.len() != 3 * n {
            return Err(shape_err((planar.len(), 1), (3 * n, 1)));
        }
        let mut data = vec![0.0; 3 * n];
        for i in 0..n {
            for c in 0..3 {
                data[i * 3 + c] = planar[c * n + i].clamp(0.0, 1.0);
            }
        }
        Ok(Self { height, width, data })
    }

    pub fn from_gray(gray: &GrayImage) -> Self {
        Self {
            height: gray.height,
            width: gray.width,
            data: gray.data.iter().flat_map(|&v| [v, v, v]).collect(),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let img = image::open(path)?.into_rgb8();
        let (w, h) = img.dimensions();
        let data = img.into_raw().into_iter().map(|v| f32::from(v) / 255.0).collect();
        Ok(Self { height: h as usize, width: w as usize, data })
    }

    /// Writes an 8-bit PNG or PPM, chosen from the file extension.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let buf = image::RgbImage::from_raw(
            self.width as u32,
            self.height as u32,
            self.data.iter().map(|&v| quantize(v)).collect(),
        )
        .expect("buffer length matches dimensions");
        buf.save(path)?;
        Ok(())
    }
}

/// 8-bit quantization used at the file boundary.
pub fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Unbounded signed raster, used for difference-of-Gaussian levels.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl Plane {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self { height, width, data: vec![0.0; height * width] }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }
}

/// ITU-R BT.601 luminance.
pub fn to_grayscale(img: &RgbImage) -> GrayImage {
    let data = img
        .data
        .chunks_exact(3)
        .map(|p| (0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]).clamp(0.0, 1.0))
        .collect();
    GrayImage { height: img.height, width: img.width, data }
}

/// Square convolution kernel of side `2 * radius + 1`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    radius: usize,
    weights: Vec<f64>,
}

impl Kernel {
    pub fn new(radius: usize, weights: Vec<f64>) -> Result<Self> {
        let side = 2 * radius + 1;
        if weights.len() != side * side {
            return Err(Error::InvalidParameter(format!(
                "kernel of radius {radius} needs {} weights, got {}",
                side * side,
                weights.len()
            )));
        }
        Ok(Self { radius, weights })
    }

    /// The kernel that leaves images unchanged.
    pub fn identity() -> Self {
        Self { radius: 0, weights: vec![1.0] }
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn side(&self) -> usize {
        2 * self.radius + 1
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Weight at offset `(dx, dy)` from the center.
    pub fn weight(&self, dx: isize, dy: isize) -> f64 {
        let r = self.radius as isize;
        let side = self.side() as isize;
        self.weights[((dy + r) * side + dx + r) as usize]
    }
}

/// Unnormalized isotropic Gaussian density at `(x, y)`.
pub fn gaussian_density(x: f64, y: f64, sigma: f64) -> f64 {
    let s2 = sigma * sigma;
    (-(x * x + y * y) / (2.0 * s2)).exp() / (2.0 * std::f64::consts::PI * s2)
}

/// Default support: `ceil(3 sigma)`.
pub fn default_radius(sigma: f64) -> usize {
    ((3.0 * sigma).ceil() as usize).max(1)
}

/// Sampled Gaussian, renormalized so the weights sum to one.
pub fn gaussian_kernel(sigma: f64, radius: usize) -> Result<Kernel> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidParameter(format!("sigma must be positive, got {sigma}")));
    }
    if radius == 0 {
        return Err(Error::InvalidParameter("kernel radius must be at least 1".into()));
    }
    let r = radius as isize;
    let mut weights = Vec::with_capacity((2 * radius + 1).pow(2));
    for dy in -r..=r {
        for dx in -r..=r {
            weights.push(gaussian_density(dx as f64, dy as f64, sigma));
        }
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    Ok(Kernel { radius, weights })
}

fn convolve_raw(height: usize, width: usize, src: &[f32], k: &Kernel) -> Vec<f64> {
    let r = k.radius as isize;
    let side = k.side();
    let mut out = vec![0.0f64; height * width];
    for y in 0..height as isize {
        for x in 0..width as isize {
            let mut acc = 0.0f64;
            for ky in 0..side as isize {
                let sy = (y + ky - r).clamp(0, height as isize - 1) as usize;
                let row = &src[sy * width..(sy + 1) * width];
                let wrow = &k.weights[ky as usize * side..(ky as usize + 1) * side];
                for (kx, &w) in wrow.iter().enumerate() {
                    let sx = (x + kx as isize - r).clamp(0, width as isize - 1) as usize;
                    acc += w * f64::from(row[sx]);
                }
            }
            out[y as usize * width + x as usize] = acc;
        }
    }
    out
}

/// Replicate-padded 2-D convolution. The kernel is applied as a correlation,
/// which is identical for the symmetric kernels used throughout.
pub fn convolve(img: &GrayImage, k: &Kernel) -> GrayImage {
    let data = convolve_raw(img.height, img.width, &img.data, k)
        .into_iter()
        .map(|v| (v as f32).clamp(0.0, 1.0))
        .collect();
    GrayImage { height: img.height, width: img.width, data }
}

/// Same as [`convolve`] for signed planes.
pub fn convolve_plane(p: &Plane, k: &Kernel) -> Plane {
    let data = convolve_raw(p.height, p.width, &p.data, k).into_iter().map(|v| v as f32).collect();
    Plane { height: p.height, width: p.width, data }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grayscale_weights() {
        let img = RgbImage::new(1, 3, vec![1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
        let g = to_grayscale(&img);
        assert!((g.get(0, 0) - 1.0).abs() < 1e-6);
        assert_eq!(g.get(1, 0), 0.0);
        assert!((g.get(2, 0) - 0.299).abs() < 1e-6);
    }

    #[test]
    fn kernel_center_and_symmetry() {
        assert!((gaussian_density(0.0, 0.0, 1.0) - 0.15915494).abs() < 1e-7);
        let k = gaussian_kernel(1.3, 4).unwrap();
        for dy in -4..=4 {
            for dx in -4..=4 {
                assert_eq!(k.weight(dx, dy), k.weight(-dx, -dy));
            }
        }
        let k = gaussian_kernel(1.6, 4).unwrap();
        let s: f64 = k.weights().iter().sum();
        assert!((s - 1.0).abs() < 1e-9);
        assert!(k.weights().iter().all(|&w| w >= 0.0));
    }

    #[test]
    fn kernel_rejects_bad_sigma() {
        assert!(matches!(gaussian_kernel(0.0, 3), Err(Error::InvalidParameter(_))));
        assert!(matches!(gaussian_kernel(-1.0, 3), Err(Error::InvalidParameter(_))));
        assert!(gaussian_kernel(1.0, 0).is_err());
    }

    #[test]
    fn constant_and_identity() {
        let img = GrayImage::filled(9, 7, 0.37);
        let out = convolve(&img, &gaussian_kernel(2.0, 6).unwrap());
        assert!(out.data().iter().all(|&v| (v - 0.37).abs() < 1e-6));
        let img = GrayImage::from_fn(5, 6, |x, y| ((x * 7 + y * 3) % 11) as f32 / 10.0);
        assert_eq!(convolve(&img, &Kernel::identity()), img);
    }

    #[test]
    fn impulse_imprints_kernel() {
        let img = GrayImage::from_fn(5, 5, |x, y| if x == 2 && y == 2 { 1.0 } else { 0.0 });
        let k = gaussian_kernel(1.0, 2).unwrap();
        let out = convolve(&img, &k);
        // Direct summation: out(x, y) = sum_k w(k) img(x + k) = w(2 - x, 2 - y).
        for y in 0..5 {
            for x in 0..5 {
                let expect = k.weight(2 - x as isize, 2 - y as isize);
                assert!((f64::from(out.get(x, y)) - expect).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn rejects_out_of_range_and_bad_length() {
        assert!(GrayImage::new(2, 2, vec![0.0; 3]).is_err());
        assert!(GrayImage::new(1, 1, vec![1.5]).is_err());
        assert!(RgbImage::new(1, 1, vec![0.0, f32::NAN, 0.0]).is_err());
    }

    #[test]
    fn file_roundtrip_is_quantization_only() {
        let dir = tempfile::tempdir().unwrap();
        let img = RgbImage::from_fn(6, 5, |x, y| [x as f32 / 4.0, y as f32 / 5.0, 0.5]);
        for name in ["a.png", "a.ppm"] {
            let p = dir.path().join(name);
            img.save(&p).unwrap();
            let back = RgbImage::load(&p).unwrap();
            assert_eq!(back.dims(), img.dims());
            for (a, b) in back.data().iter().zip(img.data()) {
                assert!((a - b).abs() <= 0.5 / 255.0 + 1e-6);
            }
        }
        let g = GrayImage::from_fn(4, 4, |x, y| (x + y) as f32 / 6.0);
        let p = dir.path().join("g.pgm");
        g.save(&p).unwrap();
        let back = GrayImage::load(&p).unwrap();
        for (a, b) in back.data().iter().zip(g.data()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-6);
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn image(h: usize, w: usize) -> impl Strategy<Value = GrayImage> {
            proptest::collection::vec(0.0f32..=1.0, h * w)
                .prop_map(move |d| GrayImage::new(h, w, d).unwrap())
        }

        proptest! {
            #[test]
            fn convolve_is_linear(a in image(8, 9), b in image(8, 9), s in 0.0f64..0.5, t in 0.0f64..0.5, sigma in 0.5f64..2.0) {
                let k = gaussian_kernel(sigma, default_radius(sigma)).unwrap();
                let mix = GrayImage::from_fn(8, 9, |x, y| (s * f64::from(a.get(x, y)) + t * f64::from(b.get(x, y))) as f32);
                let lhs = convolve(&mix, &k);
                let ca = convolve(&a, &k);
                let cb = convolve(&b, &k);
                for y in 0..8 {
                    for x in 0..9 {
                        let rhs = s * f64::from(ca.get(x, y)) + t * f64::from(cb.get(x, y));
                        prop_assert!((f64::from(lhs.get(x, y)) - rhs).abs() < 1e-6);
                    }
                }
            }

            #[test]
            fn grayscale_in_range(d in proptest::collection::vec(0.0f32..=1.0, 4 * 4 * 3)) {
                let g = to_grayscale(&RgbImage::new(4, 4, d).unwrap());
                prop_assert!(g.data().iter().all(|v| (0.0..=1.0).contains(v)));
            }
        }
    }
}
