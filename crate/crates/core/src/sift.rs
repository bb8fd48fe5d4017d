//! SIFT keypoints and descriptors on the integer pixel grid.
//!
//! Extrema are taken straight from the 3x3x3 DoG neighbourhood with no
//! sub-pixel interpolation and no initial upsampling, so every detection can
//! be reproduced by an exhaustive scan.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::{convolve, default_radius, gaussian_kernel, GrayImage, Plane};

pub const DESCRIPTOR_LEN: usize = 128;
const ORI_BINS: usize = 36;
const ORI_SIGMA_FACTOR: f64 = 1.5;
const WINDOW: usize = 16;
const CELLS: usize = 4;
const DESC_BINS: usize = 8;
const DESC_CLAMP: f32 = 0.2;
/// Smallest octave side that still leaves an interior for the 26-neighbour scan.
const MIN_OCTAVE_SIDE: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SiftParams {
    pub octaves: usize,
    pub scales_per_octave: usize,
    pub sigma0: f64,
    pub contrast_thresh: f32,
    pub edge_ratio: f32,
}

impl Default for SiftParams {
    fn default() -> Self {
        Self { octaves: 3, scales_per_octave: 3, sigma0: 1.6, contrast_thresh: 0.03, edge_ratio: 10.0 }
    }
}

#[derive(Debug, Clone)]
pub struct ScaleLevel {
    /// Absolute scale in original-image pixels.
    pub sigma: f64,
    pub image: GrayImage,
}

#[derive(Debug, Clone)]
pub struct Octave {
    pub levels: Vec<ScaleLevel>,
}

#[derive(Debug, Clone)]
pub struct ScaleSpace {
    pub octaves: Vec<Octave>,
    pub scales_per_octave: usize,
    pub sigma0: f64,
}

impl ScaleSpace {
    /// Ratio between successive level scales.
    pub fn k(&self) -> f64 {
        scale_ratio(self.scales_per_octave)
    }

    /// Scale of `level` relative to its own octave's pixel grid.
    pub fn relative_sigma(&self, level: usize) -> f64 {
        self.sigma0 * self.k().powi(level as i32)
    }

    pub fn level(&self, octave: usize, level: usize) -> &GrayImage {
        &self.octaves[octave].levels[level].image
    }
}

pub fn scale_ratio(scales_per_octave: usize) -> f64 {
    2f64.powf(1.0 / scales_per_octave as f64)
}

#[derive(Debug, Clone)]
pub struct DogPyramid {
    pub octaves: Vec<Vec<Plane>>,
}

/// A DoG extremum in its octave's local pixel grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Extremum {
    pub x: usize,
    pub y: usize,
    pub octave: usize,
    pub level: usize,
    pub response: f32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keypoint {
    pub x: f32,
    pub y: f32,
    pub sigma: f32,
    pub theta: f32,
    /// DoG value at detection. Not part of the SFT1 file; zero after loading.
    pub response: f32,
}

impl Keypoint {
    pub fn at(x: f32, y: f32) -> Self {
        Self { x, y, sigma: 0.0, theta: 0.0, response: 0.0 }
    }
}

#[derive(Clone, PartialEq)]
pub struct Descriptor(pub [f32; DESCRIPTOR_LEN]);

impl std::fmt::Debug for Descriptor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Descriptor(|f|={:.4})", self.norm())
    }
}

impl Default for Descriptor {
    fn default() -> Self {
        Self([0.0; DESCRIPTOR_LEN])
    }
}

impl Descriptor {
    pub fn from_slice(v: &[f32]) -> Result<Self> {
        let arr: [f32; DESCRIPTOR_LEN] = v.try_into().map_err(|_| {
            Error::InvalidInput(format!("descriptor needs {DESCRIPTOR_LEN} values, got {}", v.len()))
        })?;
        Ok(Self(arr))
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|&v| f64::from(v).powi(2)).sum::<f64>().sqrt()
    }

    pub fn distance(&self, other: &Descriptor) -> f64 {
        squared_distance(&self.0, &other.0).sqrt()
    }
}

pub fn squared_distance(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| f64::from(x - y).powi(2)).sum()
}

/// Keypoints with parallel descriptors for one image of `height x width`.
#[derive(Debug, Clone, PartialEq)]
pub struct SiftFeatures {
    pub height: usize,
    pub width: usize,
    pub keypoints: Vec<Keypoint>,
    pub descriptors: Vec<Descriptor>,
}

impl SiftFeatures {
    pub fn new(height: usize, width: usize, keypoints: Vec<Keypoint>, descriptors: Vec<Descriptor>) -> Result<Self> {
        if keypoints.len() != descriptors.len() {
            return Err(Error::InvalidInput(format!(
                "{} keypoints but {} descriptors",
                keypoints.len(),
                descriptors.len()
            )));
        }
        Ok(Self { height, width, keypoints, descriptors })
    }

    pub fn empty(height: usize, width: usize) -> Self {
        Self { height, width, keypoints: Vec::new(), descriptors: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.keypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keypoints.is_empty()
    }

    /// Same features restricted to `indices`, in the given order.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            height: self.height,
            width: self.width,
            keypoints: indices.iter().map(|&i| self.keypoints[i]).collect(),
            descriptors: indices.iter().map(|&i| self.descriptors[i].clone()).collect(),
        }
    }

    /// Copy with every coordinate zeroed: the "descriptors only" view.
    pub fn without_coordinates(&self) -> Self {
        let mut out = self.clone();
        for kp in &mut out.keypoints {
            kp.x = 0.0;
            kp.y = 0.0;
        }
        out
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        let mut buf = Vec::with_capacity(16 + self.len() * (16 + 4 * DESCRIPTOR_LEN));
        buf.extend_from_slice(b"SFT1");
        for v in [self.height, self.width, self.len()] {
            let v = u32::try_from(v).map_err(|_| Error::InvalidInput(format!("{v} does not fit in u32")))?;
            buf.extend_from_slice(&v.to_le_bytes());
        }
        for (kp, d) in self.keypoints.iter().zip(&self.descriptors) {
            for v in [kp.x, kp.y, kp.sigma, kp.theta].iter().chain(d.0.iter()) {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..4] != b"SFT1" {
            return Err(Error::Format("missing SFT1 header".into()));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
        let (height, width, n) = (word(4) as usize, word(8) as usize, word(12) as usize);
        let record = 4 * (4 + DESCRIPTOR_LEN);
        let expected = n.checked_mul(record).and_then(|b| b.checked_add(16));
        if expected != Some(bytes.len()) {
            return Err(Error::Format(format!(
                "SFT1 payload is {} bytes, header announces {n} records",
                bytes.len()
            )));
        }
        let mut keypoints = Vec::with_capacity(n);
        let mut descriptors = Vec::with_capacity(n);
        for rec in bytes[16..].chunks_exact(record) {
            let vals: Vec<f32> =
                rec.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
            keypoints.push(Keypoint { x: vals[0], y: vals[1], sigma: vals[2], theta: vals[3], response: 0.0 });
            descriptors.push(Descriptor::from_slice(&vals[4..])?);
        }
        Ok(Self { height, width, keypoints, descriptors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

pub fn build_scale_space(img: &GrayImage, octaves: usize, scales_per_octave: usize, sigma0: f64) -> Result<ScaleSpace> {
    if octaves == 0 {
        return Err(Error::InvalidParameter("need at least one octave".into()));
    }
    if scales_per_octave < 3 {
        return Err(Error::InvalidParameter(format!(
            "scales_per_octave must be at least 3, got {scales_per_octave}"
        )));
    }
    if !(sigma0 > 0.0) {
        return Err(Error::InvalidParameter(format!("sigma0 must be positive, got {sigma0}")));
    }
    let (h, w) = img.dims();
    if h < 32 || w < 32 {
        return Err(Error::InvalidParameter(format!("image {h}x{w} is smaller than 32x32")));
    }
    let smallest = h.min(w) >> (octaves - 1);
    if smallest < MIN_OCTAVE_SIDE {
        return Err(Error::InvalidParameter(format!(
            "{octaves} octaves on a {h}x{w} image leave a {smallest}px octave"
        )));
    }

    let k = scale_ratio(scales_per_octave);
    let n_levels = scales_per_octave + 3;
    let blur = |im: &GrayImage, sigma: f64| -> Result<GrayImage> {
        Ok(convolve(im, &gaussian_kernel(sigma, default_radius(sigma))?))
    };

    let mut out: Vec<Octave> = Vec::with_capacity(octaves);
    for o in 0..octaves {
        let base = match out.last() {
            None => blur(img, sigma0)?,
            Some(prev) => prev.levels[scales_per_octave].image.downsample2(),
        };
        let mut levels = Vec::with_capacity(n_levels);
        levels.push(ScaleLevel { sigma: sigma0 * 2f64.powi(o as i32), image: base });
        for i in 1..n_levels {
            let prev_rel = sigma0 * k.powi(i as i32 - 1);
            let rel = sigma0 * k.powi(i as i32);
            let inc = (rel * rel - prev_rel * prev_rel).sqrt();
            let image = blur(&levels[i - 1].image, inc)?;
            levels.push(ScaleLevel { sigma: rel * 2f64.powi(o as i32), image });
        }
        out.push(Octave { levels });
    }
    Ok(ScaleSpace { octaves: out, scales_per_octave, sigma0 })
}

pub fn build_dog(ss: &ScaleSpace) -> Result<DogPyramid> {
    let mut octaves = Vec::with_capacity(ss.octaves.len());
    for oct in &ss.octaves {
        if oct.levels.len() < 2 {
            return Err(Error::InvalidParameter("DoG needs at least two levels per octave".into()));
        }
        let diffs = oct
            .levels
            .windows(2)
            .map(|pair| {
                let (a, b) = (&pair[0].image, &pair[1].image);
                Plane {
                    height: a.height(),
                    width: a.width(),
                    data: b.data().iter().zip(a.data()).map(|(hi, lo)| hi - lo).collect(),
                }
            })
            .collect();
        octaves.push(diffs);
    }
    Ok(DogPyramid { octaves })
}

/// Strict 26-neighbour extremum test at an interior point.
fn is_strict_extremum(below: &Plane, at: &Plane, above: &Plane, x: usize, y: usize) -> bool {
    let v = at.get(x, y);
    let mut greater = true;
    let mut less = true;
    for (li, plane) in [below, at, above].into_iter().enumerate() {
        for ny in y - 1..=y + 1 {
            for nx in x - 1..=x + 1 {
                if li == 1 && nx == x && ny == y {
                    continue;
                }
                let n = plane.get(nx, ny);
                greater &= v > n;
                less &= v < n;
                if !greater && !less {
                    return false;
                }
            }
        }
    }
    greater || less
}

/// Principal-curvature test: `tr^2 / det < (r + 1)^2 / r` with `det > 0`.
pub fn passes_edge_test(d: &Plane, x: usize, y: usize, edge_ratio: f32) -> bool {
    let v = f64::from(d.get(x, y));
    let g = |xx: usize, yy: usize| f64::from(d.get(xx, yy));
    let dxx = g(x + 1, y) + g(x - 1, y) - 2.0 * v;
    let dyy = g(x, y + 1) + g(x, y - 1) - 2.0 * v;
    let dxy = (g(x + 1, y + 1) - g(x - 1, y + 1) - g(x + 1, y - 1) + g(x - 1, y - 1)) * 0.25;
    let tr = dxx + dyy;
    let det = dxx * dyy - dxy * dxy;
    let r = f64::from(edge_ratio);
    det > 0.0 && tr * tr * r < (r + 1.0) * (r + 1.0) * det
}

/// Scans every interior pixel of every interior DoG level. Results are in
/// `(octave, level, y, x)` order.
pub fn detect_extrema(dog: &DogPyramid, contrast_thresh: f32, edge_ratio: f32) -> Vec<Extremum> {
    let mut out = Vec::new();
    for (o, levels) in dog.octaves.iter().enumerate() {
        if levels.len() < 3 {
            continue;
        }
        for l in 1..levels.len() - 1 {
            let at = &levels[l];
            let (h, w) = (at.height, at.width);
            if h < 3 || w < 3 {
                continue;
            }
            for y in 1..h - 1 {
                for x in 1..w - 1 {
                    let v = at.get(x, y);
                    if v.abs() < contrast_thresh {
                        continue;
                    }
                    if is_strict_extremum(&levels[l - 1], at, &levels[l + 1], x, y)
                        && passes_edge_test(at, x, y, edge_ratio)
                    {
                        out.push(Extremum { x, y, octave: o, level: l, response: v });
                    }
                }
            }
        }
    }
    out
}

fn wrap_angle(a: f64) -> f64 {
    let t = a.rem_euclid(2.0 * PI);
    if t >= 2.0 * PI {
        0.0
    } else {
        t
    }
}

/// Dominant gradient orientation from a 36-bin Gaussian-weighted histogram.
/// `None` when the window carries no gradient at all.
pub fn assign_orientation(ss: &ScaleSpace, point: &Extremum) -> Option<f32> {
    let img = ss.level(point.octave, point.level);
    let (h, w) = img.dims();
    let sigma_w = ORI_SIGMA_FACTOR * ss.relative_sigma(point.level);
    let radius = (3.0 * sigma_w).round() as isize;
    let denom = 2.0 * sigma_w * sigma_w;
    let mut hist = [0.0f64; ORI_BINS];
    for dy in -radius..=radius {
        for dx in -radius..=radius {
            let px = point.x as isize + dx;
            let py = point.y as isize + dy;
            if px < 1 || py < 1 || px >= w as isize - 1 || py >= h as isize - 1 {
                continue;
            }
            let (px, py) = (px as usize, py as usize);
            let gx = f64::from(img.get(px + 1, py)) - f64::from(img.get(px - 1, py));
            let gy = f64::from(img.get(px, py + 1)) - f64::from(img.get(px, py - 1));
            let mag = gx.hypot(gy);
            if mag == 0.0 {
                continue;
            }
            let ang = wrap_angle(gy.atan2(gx));
            let bin = ((ang * ORI_BINS as f64 / (2.0 * PI)) as usize).min(ORI_BINS - 1);
            hist[bin] += mag * (-((dx * dx + dy * dy) as f64) / denom).exp();
        }
    }
    let (best, &peak) = hist
        .iter()
        .enumerate()
        .fold((0, &hist[0]), |acc, (i, v)| if *v > *acc.1 { (i, v) } else { acc });
    if peak <= 0.0 {
        return None;
    }
    Some(((best as f64 + 0.5) * 2.0 * PI / ORI_BINS as f64) as f32)
}

fn bilinear(img: &GrayImage, x: f64, y: f64) -> f64 {
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let (x0, y0) = (x0 as usize, y0 as usize);
    let p = |xx: usize, yy: usize| f64::from(img.get(xx, yy));
    (1.0 - fy) * ((1.0 - fx) * p(x0, y0) + fx * p(x0 + 1, y0)) + fy * ((1.0 - fx) * p(x0, y0 + 1) + fx * p(x0 + 1, y0 + 1))
}

/// 4x4 cells of 8-bin orientation histograms over a 16x16 window rotated by
/// `theta`, sampled on the octave grid at `(x, y)`. `None` when the window
/// leaves the image.
pub fn compute_descriptor(img: &GrayImage, x: f64, y: f64, theta: f64) -> Option<Descriptor> {
    let (h, w) = img.dims();
    let (s, c) = theta.sin_cos();
    let half = WINDOW as f64 / 2.0 - 0.5;
    let inside = |px: f64, py: f64| px >= 0.0 && py >= 0.0 && px < (w - 1) as f64 && py < (h - 1) as f64;
    let gauss_denom = 2.0 * (WINDOW as f64 / 2.0).powi(2);
    let mut hist = [0.0f64; DESCRIPTOR_LEN];
    for row in 0..WINDOW {
        let v = row as f64 - half;
        for col in 0..WINDOW {
            let u = col as f64 - half;
            let px = x + c * u - s * v;
            let py = y + s * u + c * v;
            // Probes one unit along each rotated axis.
            let probes = [(px + c, py + s), (px - c, py - s), (px - s, py + c), (px + s, py - c)];
            if !probes.iter().all(|&(a, b)| inside(a, b)) {
                return None;
            }
            let du = bilinear(img, probes[0].0, probes[0].1) - bilinear(img, probes[1].0, probes[1].1);
            let dv = bilinear(img, probes[2].0, probes[2].1) - bilinear(img, probes[3].0, probes[3].1);
            let mag = du.hypot(dv);
            if mag == 0.0 {
                continue;
            }
            let ang = wrap_angle(dv.atan2(du));
            let bin = ((ang * DESC_BINS as f64 / (2.0 * PI)) as usize).min(DESC_BINS - 1);
            let cell = (row / (WINDOW / CELLS)) * CELLS + col / (WINDOW / CELLS);
            hist[cell * DESC_BINS + bin] += mag * (-(u * u + v * v) / gauss_denom).exp();
        }
    }
    Some(normalize_descriptor(&hist))
}

fn normalize_descriptor(hist: &[f64; DESCRIPTOR_LEN]) -> Descriptor {
    let norm = hist.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Descriptor::default();
    }
    let clamped: Vec<f64> = hist.iter().map(|v| (v / norm).min(f64::from(DESC_CLAMP))).collect();
    let norm2 = clamped.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut out = [0.0f32; DESCRIPTOR_LEN];
    for (o, v) in out.iter_mut().zip(&clamped) {
        *o = (v / norm2) as f32;
    }
    Descriptor(out)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ExtractStats {
    pub candidates: usize,
    pub dropped_orientation: usize,
    pub dropped_window: usize,
}

pub fn extract_sift(img: &GrayImage, params: &SiftParams) -> Result<SiftFeatures> {
    extract_sift_with_stats(img, params).map(|(f, _)| f)
}

pub fn extract_sift_with_stats(img: &GrayImage, params: &SiftParams) -> Result<(SiftFeatures, ExtractStats)> {
    let ss = build_scale_space(img, params.octaves, params.scales_per_octave, params.sigma0)?;
    let dog = build_dog(&ss)?;
    let extrema = detect_extrema(&dog, params.contrast_thresh, params.edge_ratio);
    let mut stats = ExtractStats { candidates: extrema.len(), ..Default::default() };
    let mut keypoints = Vec::new();
    let mut descriptors = Vec::new();
    for e in &extrema {
        let Some(theta) = assign_orientation(&ss, e) else {
            stats.dropped_orientation += 1;
            continue;
        };
        let level_img = ss.level(e.octave, e.level);
        let Some(desc) = compute_descriptor(level_img, e.x as f64, e.y as f64, f64::from(theta)) else {
            stats.dropped_window += 1;
            continue;
        };
        let scale = (1usize << e.octave) as f32;
        keypoints.push(Keypoint {
            x: e.x as f32 * scale,
            y: e.y as f32 * scale,
            sigma: (ss.relative_sigma(e.level) * f64::from(scale)) as f32,
            theta,
            response: e.response,
        });
        descriptors.push(desc);
    }
    let (h, w) = img.dims();
    Ok((SiftFeatures { height: h, width: w, keypoints, descriptors }, stats))
}

/// Nearest and second-nearest Euclidean distances from `query` into `set`.
/// Ties in the nearest distance go to the lowest index.
pub fn nearest_two(query: &Descriptor, set: &[Descriptor]) -> Option<(usize, f64, f64)> {
    if set.len() < 2 {
        return None;
    }
    let mut best = (usize::MAX, f64::INFINITY);
    let mut second = f64::INFINITY;
    for (j, d) in set.iter().enumerate() {
        let dist = squared_distance(&query.0, &d.0);
        if dist < best.1 {
            second = best.1;
            best = (j, dist);
        } else if dist < second {
            second = dist;
        }
    }
    Some((best.0, best.1.sqrt(), second.sqrt()))
}

/// Ratio-test outcome: a zero nearest distance always counts as a match,
/// which also settles the `0 / 0` case of duplicated targets.
pub fn passes_ratio(d1: f64, d2: f64, t: f64) -> bool {
    d1 == 0.0 || d1 / d2 < t
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Match {
    pub a: usize,
    pub b: usize,
    pub ratio: f64,
}

/// Lowe ratio-test matching from `fa` into `fb`. Not symmetric.
pub fn match_descriptors(fa: &SiftFeatures, fb: &SiftFeatures, t: f64) -> Result<Vec<Match>> {
    if fb.len() < 2 {
        return Err(Error::Degenerate(format!(
            "ratio test needs at least two target descriptors, got {}",
            fb.len()
        )));
    }
    let mut out = Vec::new();
    for (i, q) in fa.descriptors.iter().enumerate() {
        let (j, d1, d2) = nearest_two(q, &fb.descriptors).expect("checked length");
        if passes_ratio(d1, d2, t) {
            let ratio = if d1 == 0.0 { 0.0 } else { d1 / d2 };
            out.push(Match { a: i, b: j, ratio });
        }
    }
    Ok(out)
}
