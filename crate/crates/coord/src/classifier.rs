//! Fully connected descriptor-to-region classifier.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use siftleak_core::Descriptor;
use siftleak_grad::{
    checkpoint, he_normal, softmax_rows, Adam, AdamConfig, BatchStats, Bound, ParamId, ParamSet, Real, Tape, Tensor, Var,
};

use crate::error::{CoordError, Result};
use crate::landmarks::{DescriptorClassifier, NUM_REGIONS};

/// Widths of the five linear + batch-norm + ReLU blocks; a sixth linear
/// layer produces the eight logits.
pub const HIDDEN: [usize; 5] = [256, 256, 128, 64, 32];
const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy)]
struct Block {
    w: ParamId,
    b: ParamId,
    gamma: ParamId,
    beta: ParamId,
    mean: ParamId,
    var: ParamId,
}

#[derive(Debug, Clone)]
pub struct RegionClassifier<T = f32> {
    pub params: ParamSet<T>,
    blocks: Vec<Block>,
    out_w: ParamId,
    out_b: ParamId,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassifierConfig {
    pub seed: u64,
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self { seed: 0, steps: 500, batch: 64, lr: 1e-3 }
    }
}

impl ClassifierConfig {
    /// Reads `seed`, `steps`, `batch` and `lr` from `key=value` text; `stage` is accepted and ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = Self::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(CoordError::InvalidParameter(format!("line {}: expected key=value", n + 1)));
            };
            let (k, v) = (k.trim(), v.trim());
            let bad = || CoordError::InvalidParameter(format!("{k}: cannot parse {v:?}"));
            match k {
                "seed" => c.seed = v.parse().map_err(|_| bad())?,
                "steps" => c.steps = v.parse().map_err(|_| bad())?,
                "batch" => c.batch = v.parse().map_err(|_| bad())?,
                "lr" => c.lr = v.parse().map_err(|_| bad())?,
                "stage" => {}
                _ => return Err(CoordError::InvalidParameter(format!("unknown classifier key {k:?}"))),
            }
        }
        if c.batch < 2 || !(c.lr > 0.0 && c.lr.is_finite()) {
            return Err(CoordError::InvalidParameter("classifier needs batch >= 2 and lr > 0".into()));
        }
        Ok(c)
    }
}

impl<T: Real> RegionClassifier<T> {
    pub fn new(seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let mut blocks = Vec::new();
        let mut fin = 128;
        for (i, &h) in HIDDEN.iter().enumerate() {
            blocks.push(Block {
                w: params.add(&format!("fc{i}.w"), he_normal(&[h, fin], fin, &mut rng))?,
                b: params.add(&format!("fc{i}.b"), Tensor::zeros(&[h]))?,
                gamma: params.add(&format!("bn{i}.gamma"), Tensor::full(&[h], T::one()))?,
                beta: params.add(&format!("bn{i}.beta"), Tensor::zeros(&[h]))?,
                mean: params.add_buffer(&format!("bn{i}.mean"), Tensor::zeros(&[h]))?,
                var: params.add_buffer(&format!("bn{i}.var"), Tensor::full(&[h], T::one()))?,
            });
            fin = h;
        }
        let out_w = params.add("out.w", he_normal(&[NUM_REGIONS, fin], fin, &mut rng))?;
        let out_b = params.add("out.b", Tensor::zeros(&[NUM_REGIONS]))?;
        Ok(Self { params, blocks, out_w, out_b })
    }

    /// Logits for a `(N, 128)` batch. Training mode normalizes with batch
    /// statistics and returns them per block for the running averages.
    pub fn logits(&self, tape: &mut Tape<T>, p: &Bound, x: Var, training: bool) -> Result<(Var, Vec<BatchStats<T>>)> {
        let mut h = x;
        let mut stats = Vec::new();
        let eps = T::lit(BN_EPS);
        for b in &self.blocks {
            let y = tape.linear(h, p.var(b.w), p.var(b.b))?;
            let y = if training {
                let (y, s) = tape.batch_norm(y, p.var(b.gamma), p.var(b.beta), eps)?;
                stats.push(s);
                y
            } else {
                let mean = self.params.value(b.mean).data().to_vec();
                let var = self.params.value(b.var).data().to_vec();
                tape.batch_norm_eval(y, p.var(b.gamma), p.var(b.beta), &mean, &var, eps)?
            };
            h = tape.relu(y);
        }
        Ok((tape.linear(h, p.var(self.out_w), p.var(self.out_b))?, stats))
    }

    fn update_running(&mut self, stats: &[BatchStats<T>], batch: usize) {
        let m = T::lit(BN_MOMENTUM);
        // Running variance uses the unbiased batch estimate.
        let unbias = T::lit(batch as f64 / (batch as f64 - 1.0));
        for (b, s) in self.blocks.clone().iter().zip(stats) {
            let mean = self.params.value_mut(b.mean).data_mut();
            mean.iter_mut().zip(&s.mean).for_each(|(r, &v)| *r = (T::one() - m) * *r + m * v);
            let var = self.params.value_mut(b.var).data_mut();
            var.iter_mut().zip(&s.var).for_each(|(r, &v)| *r = (T::one() - m) * *r + m * v * unbias);
        }
    }

    /// Class probabilities (rows sum to one) in inference mode.
    pub fn probabilities(&self, descs: &[Descriptor]) -> Result<Vec<[T; NUM_REGIONS]>> {
        if descs.is_empty() {
            return Ok(Vec::new());
        }
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape, false);
        let x = tape.constant(descriptor_batch(descs, (0..descs.len()).collect::<Vec<_>>().as_slice()));
        let (l, _) = self.logits(&mut tape, &p, x, false)?;
        let probs = softmax_rows(tape.value(l).data(), NUM_REGIONS);
        Ok(probs.chunks_exact(NUM_REGIONS).map(|r| std::array::from_fn(|i| r[i])).collect())
    }

    /// Most probable class per descriptor, lowest class on ties.
    pub fn predict_all(&self, descs: &[Descriptor]) -> Result<Vec<usize>> {
        Ok(self
            .probabilities(descs)?
            .iter()
            .map(|p| (0..NUM_REGIONS).fold(0, |best, c| if p[c] > p[best] { c } else { best }))
            .collect())
    }

    pub fn accuracy(&self, descs: &[Descriptor], labels: &[usize]) -> Result<f64> {
        let pred = self.predict_all(descs)?;
        let hits = pred.iter().zip(labels).filter(|(a, b)| a == b).count();
        Ok(hits as f64 / labels.len().max(1) as f64)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut t = self.params.named_f32("clf.");
        t.push(("meta.classifier".to_string(), Tensor::new(&[HIDDEN.len()], HIDDEN.map(|h| h as f32).to_vec())?));
        Ok(checkpoint::save(path, &t)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let tensors = checkpoint::load(path)?;
        let Some((_, meta)) = tensors.iter().find(|(n, _)| n == "meta.classifier") else {
            return Err(CoordError::Format("checkpoint holds no region classifier".into()));
        };
        if meta.data() != HIDDEN.map(|h| h as f32) {
            return Err(CoordError::Format(format!("classifier widths {:?} unsupported", meta.data())));
        }
        let mut c = Self::new(0)?;
        c.params.load_named_f32("clf.", &tensors)?;
        Ok(c)
    }
}

fn descriptor_batch<T: Real>(descs: &[Descriptor], idx: &[usize]) -> Tensor<T> {
    let data = idx.iter().flat_map(|&i| descs[i].0.iter().map(|&v| T::lit(f64::from(v)))).collect();
    Tensor::new(&[idx.len(), 128], data).expect("batch layout")
}

/// Per-step mean cross-entropy of a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierLog {
    pub losses: Vec<f64>,
}

/// Adam on mean cross-entropy over seeded mini-batches of `cfg.batch`
/// (or the whole corpus when smaller).
pub fn train_region_classifier(
    descs: &[Descriptor],
    labels: &[usize],
    cfg: &ClassifierConfig,
) -> Result<(RegionClassifier<f32>, ClassifierLog)> {
    if descs.len() != labels.len() {
        return Err(CoordError::InvalidInput(format!("{} descriptors but {} labels", descs.len(), labels.len())));
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= NUM_REGIONS) {
        return Err(CoordError::InvalidInput(format!("label {l} outside 0..{NUM_REGIONS}")));
    }
    let mut classes: Vec<usize> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(CoordError::Degenerate(format!("need at least two classes, found {}", classes.len())));
    }
    if cfg.batch < 2 {
        return Err(CoordError::InvalidParameter("batch size must be at least 2".into()));
    }
    let mut clf = RegionClassifier::<f32>::new(cfg.seed)?;
    let mut opt = Adam::new(AdamConfig { lr: cfg.lr, ..AdamConfig::default() });
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let batch = cfg.batch.min(descs.len());
    let mut order: Vec<usize> = (0..descs.len()).collect();
    let mut pos = order.len();
    let mut losses = Vec::with_capacity(cfg.steps);
    for _ in 0..cfg.steps {
        let mut idx = Vec::with_capacity(batch);
        while idx.len() < batch {
            if pos == order.len() {
                order.shuffle(&mut rng);
                pos = 0;
            }
            idx.push(order[pos]);
            pos += 1;
        }
        let y: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
        let mut tape = Tape::new();
        let p = clf.params.bind(&mut tape, true);
        let x = tape.constant(descriptor_batch(descs, &idx));
        let (logits, stats) = clf.logits(&mut tape, &p, x, true)?;
        let loss = tape.softmax_cross_entropy(logits, &y)?;
        losses.push(f64::from(tape.value(loss).item()));
        let g = tape.backward(loss)?;
        clf.params.accumulate(&p, &g);
        opt.step(&mut clf.params);
        clf.update_running(&stats, batch);
    }
    Ok((clf, ClassifierLog { losses }))
}

impl DescriptorClassifier for RegionClassifier<f32> {
    fn predict(&self, d: &Descriptor) -> usize {
        self.predict_all(std::slice::from_ref(d)).expect("fixed input width")[0]
    }
}
