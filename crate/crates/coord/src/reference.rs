//! Nearest-neighbour coordinate estimation against a reference corpus.

use std::collections::BTreeMap;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use siftleak_core::sift::squared_distance;
use siftleak_core::{Descriptor, SiftFeatures};

use crate::error::{CoordError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceEntry {
    pub id: String,
    pub features: SiftFeatures,
}

/// Reference images with their full features. Entry order is the image-id
/// order used for tie-breaks.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSet {
    entries: Vec<ReferenceEntry>,
}

impl ReferenceSet {
    pub fn new(entries: Vec<ReferenceEntry>) -> Result<Self> {
        if entries.is_empty() {
            return Err(CoordError::InvalidInput("reference set is empty".into()));
        }
        if let Some(e) = entries.iter().find(|e| e.features.is_empty()) {
            return Err(CoordError::InvalidInput(format!("reference {} has no descriptors", e.id)));
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[ReferenceEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Parses `path<TAB>category` lines. Blank lines and `#` comments are skipped.
pub fn parse_category_map(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((path, cat)) = line.split_once('\t') else {
            return Err(CoordError::Format(format!("category map line {}: expected path<TAB>category", n + 1)));
        };
        if path.is_empty() || cat.is_empty() {
            return Err(CoordError::Format(format!("category map line {}: empty field", n + 1)));
        }
        out.push((path.to_string(), cat.to_string()));
    }
    Ok(out)
}

/// Picks one image per category with a seeded RNG. Returns the chosen
/// paths in lexicographic order.
pub fn pick_per_category(map: &[(String, String)], seed: u64) -> Result<Vec<String>> {
    if map.is_empty() {
        return Err(CoordError::InvalidInput("category map lists no images".into()));
    }
    let mut by_cat: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for (p, c) in map {
        by_cat.entry(c.as_str()).or_default().push(p.as_str());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen: Vec<String> = by_cat
        .into_values()
        .map(|mut paths| {
            paths.sort_unstable();
            paths.dedup();
            paths.choose(&mut rng).expect("non-empty group").to_string()
        })
        .collect();
    chosen.sort();
    Ok(chosen)
}

/// Builds a reference set from a category map, loading each picked image's
/// features through `load`.
pub fn build_reference_set(
    map: &[(String, String)],
    seed: u64,
    mut load: impl FnMut(&str) -> Result<SiftFeatures>,
) -> Result<ReferenceSet> {
    let entries = pick_per_category(map, seed)?
        .into_iter()
        .map(|id| Ok(ReferenceEntry { features: load(&id)?, id }))
        .collect::<Result<Vec<_>>>()?;
    ReferenceSet::new(entries)
}

/// Exhaustive nearest neighbour of `q` in `set`: `(index, squared distance)`,
/// lowest index on ties.
pub fn nearest(q: &Descriptor, set: &[Descriptor]) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (j, d) in set.iter().enumerate() {
        let dist = squared_distance(&q.0, &d.0);
        if best.is_none_or(|(_, b)| dist < b) {
            best = Some((j, dist));
        }
    }
    best
}

fn check_dims(query: &SiftFeatures, refs: &ReferenceSet) -> Result<()> {
    if let Some(e) = refs.entries.iter().find(|e| (e.features.height, e.features.width) != (query.height, query.width)) {
        return Err(CoordError::InvalidInput(format!(
            "reference {} is {}x{}, query is {}x{}",
            e.id, e.features.height, e.features.width, query.height, query.width
        )));
    }
    Ok(())
}

/// Where each query descriptor came from in the reference set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Assignment {
    pub image: usize,
    pub index: usize,
    pub distance: f64,
}

/// Global nearest reference descriptor for each query, ties to the lowest
/// `(image, index)`.
pub fn assign_descriptor_level(query: &SiftFeatures, refs: &ReferenceSet) -> Vec<Assignment> {
    query
        .descriptors
        .iter()
        .map(|q| {
            let mut best = Assignment { image: 0, index: 0, distance: f64::INFINITY };
            for (i, e) in refs.entries.iter().enumerate() {
                let (j, d) = nearest(q, &e.features.descriptors).expect("entries are non-empty");
                if d < best.distance {
                    best = Assignment { image: i, index: j, distance: d };
                }
            }
            best.distance = best.distance.sqrt();
            best
        })
        .collect()
}

/// `D(F, F_j)`: mean over queries of the Euclidean distance to the nearest descriptor of `set`.
pub fn average_min_distance(query: &[Descriptor], set: &[Descriptor]) -> f64 {
    if query.is_empty() {
        return 0.0;
    }
    let total: f64 = query.iter().map(|q| nearest(q, set).expect("non-empty set").1.sqrt()).sum();
    total / query.len() as f64
}

/// Reference image minimizing [`average_min_distance`], lowest index on ties.
pub fn select_reference(query: &SiftFeatures, refs: &ReferenceSet) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, e) in refs.entries.iter().enumerate() {
        let d = average_min_distance(&query.descriptors, &e.features.descriptors);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

pub fn assign_image_level(query: &SiftFeatures, refs: &ReferenceSet) -> (usize, Vec<Assignment>) {
    let (image, _) = select_reference(query, refs);
    let set = &refs.entries[image].features.descriptors;
    let assigned = query
        .descriptors
        .iter()
        .map(|q| {
            let (index, d) = nearest(q, set).expect("non-empty entry");
            Assignment { image, index, distance: d.sqrt() }
        })
        .collect();
    (image, assigned)
}

/// Copies the assigned reference coordinates onto the queries, then keeps
/// one seeded-random descriptor per coordinate collision. Survivors stay in
/// query order.
pub fn apply_assignments(query: &SiftFeatures, refs: &ReferenceSet, assigned: &[Assignment], seed: u64) -> SiftFeatures {
    let coords: Vec<(f32, f32)> = assigned
        .iter()
        .map(|a| {
            let kp = refs.entries[a.image].features.keypoints[a.index];
            (kp.x, kp.y)
        })
        .collect();
    let keep = resolve_collisions(&coords, seed);
    let mut out = query.select(&keep);
    for (kp, &i) in out.keypoints.iter_mut().zip(&keep) {
        kp.x = coords[i].0;
        kp.y = coords[i].1;
    }
    out
}

/// Indices of one randomly kept entry per distinct coordinate, ascending.
/// Groups are visited in sorted coordinate order so the draw sequence is
/// fixed for a given input.
pub fn resolve_collisions(coords: &[(f32, f32)], seed: u64) -> Vec<usize> {
    let mut groups: BTreeMap<(u32, u32), Vec<usize>> = BTreeMap::new();
    for (i, &(x, y)) in coords.iter().enumerate() {
        groups.entry((y.to_bits(), x.to_bits())).or_default().push(i);
    }
    let mut ordered: Vec<_> = groups.into_iter().collect();
    ordered.sort_by(|a, b| {
        let (ya, xa) = (f32::from_bits(a.0 .0), f32::from_bits(a.0 .1));
        let (yb, xb) = (f32::from_bits(b.0 .0), f32::from_bits(b.0 .1));
        ya.total_cmp(&yb).then(xa.total_cmp(&xb))
    });
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep: Vec<usize> = ordered
        .into_iter()
        .map(|(_, members)| if members.len() == 1 { members[0] } else { *members.choose(&mut rng).unwrap() })
        .collect();
    keep.sort_unstable();
    keep
}

pub fn estimate_descriptor_level(query: &SiftFeatures, refs: &ReferenceSet, seed: u64) -> Result<SiftFeatures> {
    check_dims(query, refs)?;
    let a = assign_descriptor_level(query, refs);
    Ok(apply_assignments(query, refs, &a, seed))
}

pub fn estimate_image_level(query: &SiftFeatures, refs: &ReferenceSet, seed: u64) -> Result<SiftFeatures> {
    check_dims(query, refs)?;
    let (_, a) = assign_image_level(query, refs);
    Ok(apply_assignments(query, refs, &a, seed))
}
