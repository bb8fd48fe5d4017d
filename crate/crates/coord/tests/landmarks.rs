use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use siftleak_coord::landmarks::{region_of, REGIONS, OTHER};
use siftleak_coord::{estimate_landmark, label_descriptors, DescriptorClassifier, LandmarkSet};
use siftleak_core::{Descriptor, Keypoint, SiftFeatures};

fn random_landmarks(rng: &mut ChaCha8Rng, size: f32) -> LandmarkSet {
    LandmarkSet::new((0..68).map(|_| (rng.random_range(0.0..size - 1.0), rng.random_range(0.0..size - 1.0))).collect()).unwrap()
}

fn feats_at(points: &[(f32, f32)], size: usize) -> SiftFeatures {
    let kps = points.iter().map(|&(x, y)| Keypoint::at(x, y)).collect();
    let descs = points
        .iter()
        .enumerate()
        .map(|(i, _)| {
            let mut d = Descriptor::default();
            d.0[0] = (i % 8) as f32;
            d
        })
        .collect();
    SiftFeatures::new(size, size, kps, descs).unwrap()
}

#[test]
fn regions_partition_all_landmarks() {
    let mut count = [0usize; 7];
    for i in 0..68 {
        count[region_of(i)] += 1;
    }
    assert_eq!(count, [17, 5, 5, 9, 6, 6, 20]);
    assert_eq!(REGIONS.len() + 1, 8);
}

#[test]
fn labels_match_exhaustive_nearest_landmark() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..10 {
        let lm = random_landmarks(&mut rng, 128.0);
        let pts: Vec<(f32, f32)> = (0..300).map(|_| (rng.random_range(0.0..128.0), rng.random_range(0.0..128.0))).collect();
        let labels = label_descriptors(&feats_at(&pts, 128), &lm);
        for (p, &l) in pts.iter().zip(&labels) {
            let mut d: Vec<(f64, usize)> = lm
                .points()
                .iter()
                .enumerate()
                .map(|(i, q)| (f64::from(p.0 - q.0).hypot(f64::from(p.1 - q.1)), i))
                .collect();
            d.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let want = if d[0].0 > 10.0 { 7 } else { region_of(d[0].1) };
            assert_eq!(l, want);
            assert!(l <= 7);
        }
    }
}

#[test]
fn label_edge_cases() {
    let mut pts: Vec<(f32, f32)> = (0..68).map(|i| (100.0 + i as f32 * 0.5, 100.0)).collect();
    pts[0] = (10.0, 10.0);
    let lm = LandmarkSet::new(pts).unwrap();
    let labels = label_descriptors(&feats_at(&[(10.0, 10.0), (60.0, 60.0), (20.0, 10.0)], 200), &lm);
    assert_eq!(labels, vec![0, OTHER, 0]);
}

#[test]
fn landmark_file_roundtrip() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let lm = random_landmarks(&mut rng, 64.0);
    assert_eq!(LandmarkSet::parse(&lm.to_text()).unwrap(), lm);
    assert!(LandmarkSet::parse("1 2\n3 4\n").is_err());
    assert!(LandmarkSet::parse(&"1 x\n".repeat(68)).is_err());
}

struct Always(usize);

impl DescriptorClassifier for Always {
    fn predict(&self, _: &Descriptor) -> usize {
        self.0
    }
}

/// Reads the label off the first descriptor component.
struct FirstValue;

impl DescriptorClassifier for FirstValue {
    fn predict(&self, d: &Descriptor) -> usize {
        d.0[0] as usize
    }
}

#[test]
fn other_label_discards_everything() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let lm = random_landmarks(&mut rng, 64.0);
    let q = feats_at(&[(0.0, 0.0); 20], 64);
    assert!(estimate_landmark(&q, &Always(OTHER), &lm, 0).unwrap().is_empty());
}

#[test]
fn placements_stay_near_their_region() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let lm = random_landmarks(&mut rng, 64.0);
    let q = feats_at(&[(0.0, 0.0); 64], 64).without_coordinates();
    let out = estimate_landmark(&q, &FirstValue, &lm, 11).unwrap();
    assert_eq!(out.len(), 56);
    for (k, d) in out.keypoints.iter().zip(&out.descriptors) {
        let c = d.0[0] as usize;
        assert!(c < OTHER);
        let near = REGIONS[c].clone().any(|i| {
            let (x, y) = lm.points()[i];
            (k.x - x).abs() <= 3.0 + 1e-4 && (k.y - y).abs() <= 3.0 + 1e-4
        });
        assert!(near, "{k:?} not within 3 px of region {c}");
        assert!(k.x >= 0.0 && k.y >= 0.0 && k.x <= 63.0 && k.y <= 63.0);
    }
    assert_eq!(out, estimate_landmark(&q, &FirstValue, &lm, 11).unwrap());
    assert_ne!(out, estimate_landmark(&q, &FirstValue, &lm, 12).unwrap());
}

#[test]
fn border_landmarks_are_clamped() {
    let lm = LandmarkSet::new(vec![(0.0, 31.0); 68]).unwrap();
    let q = feats_at(&[(0.0, 0.0); 40], 32);
    let out = estimate_landmark(&q, &Always(3), &lm, 1).unwrap();
    assert!(out.keypoints.iter().all(|k| k.x >= 0.0 && k.x <= 3.0 && k.y >= 28.0 && k.y <= 31.0));
    let outside = LandmarkSet::new(vec![(40.0, 1.0); 68]).unwrap();
    assert!(estimate_landmark(&q, &Always(3), &outside, 1).is_err());
}
