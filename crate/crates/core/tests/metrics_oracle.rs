use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use siftleak_core::{prm, psnr, ssim, Descriptor, GrayImage, Keypoint, RgbImage, SiftFeatures};

fn ssim_reference(a: &GrayImage, b: &GrayImage) -> f64 {
    let g: Vec<f64> = (-5i32..=5).map(|d| (-(d * d) as f64 / 4.5).exp()).collect();
    let s: f64 = g.iter().sum();
    let win = |dx: usize, dy: usize| g[dx] * g[dy] / (s * s);
    let (h, w) = a.dims();
    let (c1, c2) = (0.0001, 0.0009);
    let mut vals = Vec::new();
    for y in 5..h - 5 {
        for x in 5..w - 5 {
            let mut m = [0.0f64; 5];
            for dy in 0..11 {
                for dx in 0..11 {
                    let p = f64::from(a.get(x + dx - 5, y + dy - 5));
                    let q = f64::from(b.get(x + dx - 5, y + dy - 5));
                    let k = win(dx, dy);
                    m[0] += k * p;
                    m[1] += k * q;
                    m[2] += k * p * p;
                    m[3] += k * q * q;
                    m[4] += k * p * q;
                }
            }
            let (mu_a, mu_b) = (m[0], m[1]);
            let num = (2.0 * mu_a * mu_b + c1) * (2.0 * (m[4] - mu_a * mu_b) + c2);
            let den = (mu_a * mu_a + mu_b * mu_b + c1) * (m[2] - mu_a * mu_a + m[3] - mu_b * mu_b + c2);
            vals.push(num / den);
        }
    }
    vals.iter().sum::<f64>() / vals.len() as f64
}

#[test]
fn ssim_matches_direct_evaluation() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for size in [11usize, 16, 32] {
        let a = GrayImage::from_fn(size, size + 3, |_, _| rng.random_range(0.0..1.0));
        let b = a.map(|v| v * 0.7 + 0.1);
        let c = GrayImage::from_fn(size, size + 3, |_, _| rng.random_range(0.0..1.0));
        for other in [&a, &b, &c] {
            let got = ssim(&a, other).unwrap();
            assert!((got - ssim_reference(&a, other)).abs() < 1e-9);
            assert!((got - ssim(other, &a).unwrap()).abs() < 1e-12);
            assert!(got <= 1.0 + 1e-12);
        }
    }
}

#[test]
fn psnr_matches_direct_evaluation() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a = RgbImage::from_fn(9, 7, |_, _| [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)]);
    let b = RgbImage::from_fn(9, 7, |_, _| [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)]);
    let mse: f64 = a.data().iter().zip(b.data()).map(|(&x, &y)| f64::from(x - y).powi(2)).sum::<f64>() / (9.0 * 7.0 * 3.0);
    assert!((psnr(&a, &b).unwrap() + 10.0 * mse.log10()).abs() < 1e-9);
}

fn random_set(rng: &mut ChaCha8Rng, n: usize) -> SiftFeatures {
    let descs: Vec<Descriptor> = (0..n)
        .map(|_| {
            let mut d = Descriptor::default();
            for v in d.0.iter_mut() {
                *v = rng.random_range(0.0..0.2);
            }
            d
        })
        .collect();
    SiftFeatures::new(32, 32, vec![Keypoint::at(0.0, 0.0); n], descs).unwrap()
}

fn prm_reference(gt: &SiftFeatures, recon: &SiftFeatures, t: f64) -> f64 {
    if recon.is_empty() {
        return 0.0;
    }
    let mut hits = 0;
    for q in &recon.descriptors {
        let mut d: Vec<f64> = gt.descriptors.iter().map(|g| q.distance(g)).collect();
        d.sort_by(|a, b| a.partial_cmp(b).unwrap());
        if d[0] == 0.0 || d[0] / d[1] < t {
            hits += 1;
        }
    }
    f64::from(hits) / recon.len() as f64
}

#[test]
fn prm_properties_on_random_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let ts = [0.0, 0.3, 0.6, 0.8, 0.9, 0.95, 1.0, 1.5];
    for _ in 0..100 {
        let n_gt = rng.random_range(2..30);
        let n_r = rng.random_range(0..30);
        let gt = random_set(&mut rng, n_gt);
        let recon = random_set(&mut rng, n_r);
        assert_eq!(prm(&gt, &gt, 0.8).unwrap().prm, 1.0);
        let mut prev = 0.0;
        for &t in &ts {
            let p = prm(&gt, &recon, t).unwrap().prm;
            assert!((0.0..=1.0).contains(&p));
            assert!(p >= prev);
            assert!((p - prm_reference(&gt, &recon, t)).abs() < 1e-12);
            prev = p;
        }
    }
}
