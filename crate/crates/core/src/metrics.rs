//! Reconstruction quality and SIFT re-matching leakage.

use crate::error::{shape_err, Error, Result};
use crate::image::{to_grayscale, GrayImage, RgbImage};
use crate::sift::{extract_sift, nearest_two, passes_ratio, SiftFeatures, SiftParams};

pub const DEFAULT_RATIO: f64 = 0.8;

/// PSNR over all channels with unit peak. Identical images give `+inf`.
pub fn psnr(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(shape_err(a.dims(), b.dims()));
    }
    let mse = a.data().iter().zip(b.data()).map(|(&x, &y)| f64::from(x - y).powi(2)).sum::<f64>()
        / a.data().len() as f64;
    Ok(if mse == 0.0 { f64::INFINITY } else { 10.0 * (1.0 / mse).log10() })
}

pub fn format_db(v: f64) -> String {
    if v.is_infinite() {
        "inf".to_string()
    } else {
        format!("{v:.4}")
    }
}

const SSIM_RADIUS: usize = 5;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn ssim_window() -> Vec<f64> {
    let r = SSIM_RADIUS as isize;
    let mut w: Vec<f64> = (-r..=r)
        .flat_map(|dy| (-r..=r).map(move |dx| (-((dx * dx + dy * dy) as f64) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()))
        .collect();
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Mean SSIM over every position where the 11x11 Gaussian window fits.
pub fn ssim(a: &GrayImage, b: &GrayImage) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(shape_err(a.dims(), b.dims()));
    }
    let (h, w) = a.dims();
    let side = 2 * SSIM_RADIUS + 1;
    if h < side || w < side {
        return Err(Error::InvalidInput(format!("SSIM needs at least {side}x{side}, got {h}x{w}")));
    }
    let win = ssim_window();
    let c1 = (SSIM_K1 * 1.0).powi(2);
    let c2 = (SSIM_K2 * 1.0).powi(2);
    // Separable moments would be faster; images here are small.
    let mut total = 0.0;
    let mut count = 0usize;
    for y0 in 0..=h - side {
        for x0 in 0..=w - side {
            let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for dy in 0..side {
                for dx in 0..side {
                    let wt = win[dy * side + dx];
                    let va = f64::from(a.get(x0 + dx, y0 + dy));
                    let vb = f64::from(b.get(x0 + dx, y0 + dy));
                    ma += wt * va;
                    mb += wt * vb;
                    saa += wt * va * va;
                    sbb += wt * vb * vb;
                    sab += wt * va * vb;
                }
            }
            let va = saa - ma * ma;
            let vb = sbb - mb * mb;
            let cov = sab - ma * mb;
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RematchPair {
    pub recon: usize,
    pub gt: usize,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrmReport {
    pub prm: f64,
    pub matches: Vec<RematchPair>,
    pub n_recon: usize,
    pub n_gt: usize,
}

impl PrmReport {
    /// One `recon_idx gt_idx ratio` line per accepted pair.
    pub fn match_lines(&self) -> String {
        self.matches.iter().map(|m| format!("{} {} {:.6}\n", m.recon, m.gt, m.ratio)).collect()
    }
}

/// Fraction of reconstructed descriptors passing the ratio test against the
/// ground-truth set. Zero reconstructed descriptors give PRM 0.
pub fn prm(f_gt: &SiftFeatures, f_recon: &SiftFeatures, t: f64) -> Result<PrmReport> {
    if f_gt.len() < 2 {
        return Err(Error::Degenerate(format!(
            "re-matching needs at least two ground-truth descriptors, got {}",
            f_gt.len()
        )));
    }
    let mut matches = Vec::new();
    for (i, q) in f_recon.descriptors.iter().enumerate() {
        let (j, d1, d2) = nearest_two(q, &f_gt.descriptors).expect("checked length");
        if passes_ratio(d1, d2, t) {
            matches.push(RematchPair { recon: i, gt: j, ratio: if d1 == 0.0 { 0.0 } else { d1 / d2 } });
        }
    }
    let n_recon = f_recon.len();
    let prm = if n_recon == 0 { 0.0 } else { matches.len() as f64 / n_recon as f64 };
    Ok(PrmReport { prm, matches, n_recon, n_gt: f_gt.len() })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub psnr: f64,
    pub ssim: f64,
    pub prm: PrmReport,
}

pub const CSV_HEADER: &str = "image_id,variant,psnr_db,ssim,prm";

impl EvalRecord {
    pub fn csv_row(&self, image_id: &str, variant: &str) -> String {
        format!("{image_id},{variant},{},{:.6},{:.6}", format_db(self.psnr), self.ssim, self.prm.prm)
    }
}

pub fn evaluate_reconstruction(gt: &RgbImage, recon: &RgbImage, params: &SiftParams, t: f64) -> Result<EvalRecord> {
    if gt.dims() != recon.dims() {
        return Err(shape_err(gt.dims(), recon.dims()));
    }
    let g_gray = to_grayscale(gt);
    let r_gray = to_grayscale(recon);
    let f_gt = extract_sift(&g_gray, params)?;
    let f_recon = extract_sift(&r_gray, params)?;
    Ok(EvalRecord { psnr: psnr(gt, recon)?, ssim: ssim(&g_gray, &r_gray)?, prm: prm(&f_gt, &f_recon, t)? })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sift::{Descriptor, Keypoint};

    fn set(descs: Vec<Descriptor>) -> SiftFeatures {
        let kps = vec![Keypoint::at(0.0, 0.0); descs.len()];
        SiftFeatures::new(4, 4, kps, descs).unwrap()
    }

    fn unit(i: usize) -> Descriptor {
        let mut d = Descriptor::default();
        d.0[i] = 1.0;
        d
    }

    #[test]
    fn psnr_cases() {
        let a = RgbImage::from_fn(4, 4, |x, y| [0.2 + 0.1 * x as f32, 0.5, 0.1 * y as f32]);
        assert!(psnr(&a, &a).unwrap().is_infinite());
        assert_eq!(format_db(psnr(&a, &a).unwrap()), "inf");
        let b = RgbImage::from_fn(4, 4, |x, y| {
            let p = a.pixel(x, y);
            [p[0] + 0.1, p[1] + 0.1, p[2] + 0.1]
        });
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-4);
        assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
        let c = RgbImage::from_fn(3, 4, |_, _| [0.0; 3]);
        assert!(matches!(psnr(&a, &c), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn ssim_identity_and_errors() {
        let a = GrayImage::from_fn(16, 16, |x, y| ((x * 13 + y * 7) % 17) as f32 / 16.0);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-9);
        let small = GrayImage::filled(10, 16, 0.5);
        assert!(ssim(&small, &small).is_err());
        assert!(ssim(&a, &GrayImage::filled(16, 15, 0.0)).is_err());
    }

    #[test]
    fn prm_cases() {
        let f = set(vec![unit(0), unit(1), unit(2)]);
        let r = prm(&f, &f, 0.8).unwrap();
        assert_eq!(r.prm, 1.0);
        assert_eq!((r.n_recon, r.n_gt), (3, 3));

        let mut mid = Descriptor::default();
        mid.0[0] = 0.5;
        mid.0[1] = 0.5;
        let r = prm(&set(vec![unit(0), unit(1)]), &set(vec![mid]), 0.8).unwrap();
        assert_eq!(r.prm, 0.0);
        assert!(r.matches.is_empty());

        let r = prm(&f, &set(vec![]), 0.8).unwrap();
        assert_eq!(r.prm, 0.0);
        assert!(matches!(prm(&set(vec![unit(0)]), &f, 0.8), Err(Error::Degenerate(_))));
    }

    #[test]
    fn match_lines_format() {
        let f = set(vec![unit(0), unit(1)]);
        let r = prm(&f, &f, 0.8).unwrap();
        assert_eq!(r.match_lines(), "0 0 0.000000\n1 1 0.000000\n");
    }

    #[test]
    fn csv_row_has_five_fields() {
        let rec = EvalRecord {
            psnr: f64::INFINITY,
            ssim: 1.0,
            prm: PrmReport { prm: 1.0, matches: vec![], n_recon: 0, n_gt: 2 },
        };
        let row = rec.csv_row("img0", "full");
        assert_eq!(row.split(',').count(), 5);
        assert_eq!(CSV_HEADER.split(',').count(), 5);
        assert!(row.starts_with("img0,full,inf,"));
    }
}
