use std::collections::BTreeSet;

use proptest::prelude::*;
use siftleak_coord::landmarks::{label_descriptors, LandmarkSet, OTHER};
use siftleak_coord::reference::resolve_collisions;
use siftleak_coord::{estimate_descriptor_level, ReferenceEntry, ReferenceSet};
use siftleak_core::{Descriptor, Keypoint, SiftFeatures};

fn coords() -> impl Strategy<Value = Vec<(f32, f32)>> {
    proptest::collection::vec((0u8..6, 0u8..6).prop_map(|(x, y)| (f32::from(x), f32::from(y))), 0..40)
}

fn desc(v: u8) -> Descriptor {
    let mut d = Descriptor::default();
    d.0[usize::from(v % 128)] = 1.0;
    d.0[(usize::from(v) * 7 + 3) % 128] += 0.5;
    d
}

proptest! {
    #[test]
    fn one_survivor_per_coordinate(c in coords(), seed in 0u64..1000) {
        let keep = resolve_collisions(&c, seed);
        let distinct: BTreeSet<_> = c.iter().map(|&(x, y)| (x.to_bits(), y.to_bits())).collect();
        prop_assert_eq!(keep.len(), distinct.len());
        prop_assert!(keep.windows(2).all(|w| w[0] < w[1]));
        let kept: BTreeSet<_> = keep.iter().map(|&i| (c[i].0.to_bits(), c[i].1.to_bits())).collect();
        prop_assert_eq!(kept, distinct);
        prop_assert_eq!(resolve_collisions(&c, seed), keep);
    }

    #[test]
    fn estimates_are_unique_in_bounds_and_drawn_from_the_query(
        refs in proptest::collection::vec(proptest::collection::vec((0u8..200, 0u8..32, 0u8..32), 1..20), 1..4),
        query in proptest::collection::vec(0u8..200, 1..30),
        seed in 0u64..100,
    ) {
        let entries = refs
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let kps = r.iter().map(|&(_, x, y)| Keypoint::at(f32::from(x), f32::from(y))).collect();
                let ds = r.iter().map(|&(v, _, _)| desc(v)).collect();
                ReferenceEntry { id: i.to_string(), features: SiftFeatures::new(32, 32, kps, ds).unwrap() }
            })
            .collect();
        let refs = ReferenceSet::new(entries).unwrap();
        let q = SiftFeatures::new(32, 32, vec![Keypoint::at(0.0, 0.0); query.len()], query.iter().map(|&v| desc(v)).collect()).unwrap();
        let est = estimate_descriptor_level(&q, &refs, seed).unwrap();
        let pos: BTreeSet<_> = est.keypoints.iter().map(|k| (k.x.to_bits(), k.y.to_bits())).collect();
        prop_assert_eq!(pos.len(), est.len());
        prop_assert!(est.keypoints.iter().all(|k| k.x >= 0.0 && k.y >= 0.0 && k.x < 32.0 && k.y < 32.0));
        prop_assert!(est.descriptors.iter().all(|d| q.descriptors.contains(d)));
    }

    #[test]
    fn labels_stay_in_range(pts in proptest::collection::vec((0.0f32..64.0, 0.0f32..64.0), 1..50), shift in 0.0f32..20.0) {
        let lm = LandmarkSet::new((0..68).map(|i| ((i % 9) as f32 * 7.0 + shift, (i / 9) as f32 * 7.0)).collect()).unwrap();
        let kps = pts.iter().map(|&(x, y)| Keypoint::at(x, y)).collect();
        let f = SiftFeatures::new(64, 64, kps, vec![Descriptor::default(); pts.len()]).unwrap();
        prop_assert!(label_descriptors(&f, &lm).iter().all(|&l| l <= OTHER));
    }
}
