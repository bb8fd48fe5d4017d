//! Alternating discriminator / generator training for the three stages.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use siftleak_core::{build_binary_map, build_feature_map, extract_lbp, lbp_to_image, to_grayscale, RgbImage, SiftFeatures};
use siftleak_grad::{Adam, AdamConfig, Tape, Tensor, Var};

use crate::config::{Stage, TrainConfig};
use crate::error::{Result, SliError};
use crate::losses::{self, GeneratorTerms};
use crate::model::{binary_tensor, feature_tensor, gray_tensor, image_tensor, SliModel};
use crate::nets::{NetworkSpec, PatchGan, PerceptNet, Role, UNet};

/// One training pair with every input and target precomputed.
#[derive(Debug, Clone)]
pub struct TrainItem {
    pub id: String,
    pub height: usize,
    pub width: usize,
    pub features: Tensor<f32>,
    pub binary: Tensor<f32>,
    pub lbp: Tensor<f32>,
    pub image: Tensor<f32>,
}

impl TrainItem {
    /// Builds the dense feature map, keypoint-location map and LBP target
    /// (code / 255 of the grayscale image).
    pub fn new(id: impl Into<String>, image: &RgbImage, feats: &SiftFeatures) -> Result<Self> {
        if (feats.height, feats.width) != image.dims() {
            return Err(SliError::Shape(format!(
                "features are for {}x{}, image is {}x{}",
                feats.height,
                feats.width,
                image.height(),
                image.width()
            )));
        }
        let lbp = lbp_to_image(&extract_lbp(&to_grayscale(image)));
        Ok(Self {
            id: id.into(),
            height: image.height(),
            width: image.width(),
            features: feature_tensor(&build_feature_map(feats)?),
            binary: binary_tensor(&build_binary_map(feats)?),
            lbp: gray_tensor(&lbp),
            image: image_tensor(image),
        })
    }
}

/// Loss values of one step. `style` is 0 where it does not apply.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub step: u64,
    pub phase: Stage,
    pub item: usize,
    pub loss_d: f64,
    pub recon: f64,
    pub perceptual: f64,
    pub style: f64,
    pub adversarial: f64,
    pub total: f64,
}

pub const LOG_HEADER: &str = "step,phase,item,loss_d,recon,perceptual,style,adversarial,total";

impl LogRow {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            self.step,
            self.phase.name(),
            self.item,
            self.loss_d,
            self.recon,
            self.perceptual,
            self.style,
            self.adversarial,
            self.total
        )
    }
}

pub enum TrainEvent<'a> {
    Step(&'a LogRow),
    Checkpoint(&'a SliModel),
}

struct GanPart {
    disc: PatchGan<f32>,
    opt: Adam<f32>,
}

struct Outcome {
    loss_d: f64,
    values: [f64; 5],
}

/// Discriminator update on `(target, fake)`, then the generator loss with
/// the updated discriminator frozen. Returns the generator total on `tape`.
fn adversarial_update(
    tape: &mut Tape<f32>,
    out: Var,
    target: &Tensor<f32>,
    gan: &mut GanPart,
    percept: &PerceptNet<f32>,
    cfg: &TrainConfig,
    with_style: bool,
) -> Result<(Var, Outcome)> {
    let fake = tape.value(out).clone();
    let loss_d = {
        let mut td = Tape::new();
        let p = gan.disc.params.bind(&mut td, true);
        let real = td.constant(target.clone());
        let fake = td.constant(fake);
        let lr = gan.disc.forward(&mut td, &p, real)?;
        let lf = gan.disc.forward(&mut td, &p, fake)?;
        let (ld, _) = losses::ragan(&mut td, lr, lf)?;
        let v = f64::from(td.value(ld).item());
        let g = td.backward(ld)?;
        gan.disc.params.accumulate(&p, &g);
        gan.opt.step(&mut gan.disc.params);
        v
    };

    let pd = gan.disc.params.bind(tape, false);
    let pp = percept.params.bind(tape, false);
    let gt = tape.constant(target.clone());
    let real_logits = gan.disc.forward(tape, &pd, gt)?;
    let fake_logits = gan.disc.forward(tape, &pd, out)?;
    let (_, adversarial) = losses::ragan(tape, real_logits, fake_logits)?;
    let recon = losses::recon(tape, out, gt)?;
    let perceptual = losses::perceptual(tape, percept, &pp, out, gt)?;
    let style = if with_style { Some(losses::style(tape, percept, &pp, out, gt)?) } else { None };
    let terms = GeneratorTerms { recon, perceptual, style, adversarial };
    let total = losses::generator_total(tape, &cfg.weights, &terms)?;
    let val = |tape: &Tape<f32>, v: Var| f64::from(tape.value(v).item());
    let values = [
        val(tape, recon),
        val(tape, perceptual),
        style.map_or(0.0, |s| val(tape, s)),
        val(tape, adversarial),
        val(tape, total),
    ];
    Ok((total, Outcome { loss_d, values }))
}

fn check_corpus(corpus: &[TrainItem]) -> Result<()> {
    let Some(first) = corpus.first() else {
        return Err(SliError::InvalidInput("training corpus is empty".into()));
    };
    if let Some(bad) = corpus.iter().find(|c| (c.height, c.width) != (first.height, first.width)) {
        return Err(SliError::Shape(format!(
            "corpus mixes {}x{} ({}) with {}x{} ({})",
            first.height, first.width, first.id, bad.height, bad.width, bad.id
        )));
    }
    Ok(())
}

struct Schedule {
    rng: ChaCha8Rng,
    order: Vec<usize>,
    pos: usize,
}

impl Schedule {
    fn new(n: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(7);
        Self { rng, order: (0..n).collect(), pos: n }
    }

    fn next(&mut self) -> usize {
        if self.pos == self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        self.pos += 1;
        self.order[self.pos - 1]
    }
}

/// Trains the networks of `cfg.stage` on `corpus`, one item per step.
///
/// `observer` sees each step's losses and every `checkpoint_every`-th model.
pub fn train(
    corpus: &[TrainItem],
    cfg: &TrainConfig,
    mut observer: impl FnMut(TrainEvent<'_>) -> Result<()>,
) -> Result<SliModel> {
    cfg.validate()?;
    check_corpus(corpus)?;
    let mut model = SliModel::empty(cfg.seed, cfg.depth, cfg.base_channels, cfg.disc_channels);
    let (h, w) = (corpus[0].height, corpus[0].width);
    let adam = AdamConfig { lr: cfg.lr, beta1: cfg.beta1, beta2: cfg.beta2, ..AdamConfig::default() };
    let percept = PerceptNet::<f32>::new(cfg.seed)?;
    let new_gan = |role| -> Result<GanPart> {
        Ok(GanPart { disc: PatchGan::new(NetworkSpec::for_role(role, 0, cfg.disc_channels), cfg.seed)?, opt: Adam::new(adam) })
    };
    let new_unet = |role| -> Result<UNet<f32>> {
        let net = UNet::new(NetworkSpec::for_role(role, cfg.depth, cfg.base_channels), cfg.seed)?;
        net.check_input(net.spec.input_channels, h, w)?;
        Ok(net)
    };

    let mut schedule = Schedule::new(corpus.len(), cfg.seed);
    let mut step = 0u64;
    let emit = |model: &SliModel, row: &LogRow, observer: &mut dyn FnMut(TrainEvent<'_>) -> Result<()>| {
        observer(TrainEvent::Step(row))?;
        if cfg.checkpoint_every > 0 && row.step % cfg.checkpoint_every as u64 == 0 {
            observer(TrainEvent::Checkpoint(model))?;
        }
        Ok::<_, SliError>(())
    };

    match cfg.stage {
        Stage::Lbp | Stage::Full => {
            let mut g1 = new_unet(Role::G1)?;
            let mut g1_opt = Adam::new(adam);
            let mut d1 = new_gan(Role::D1)?;
            let lbp_steps = if cfg.stage == Stage::Lbp { cfg.steps } else { cfg.pretrain_steps };
            for _ in 0..lbp_steps {
                let i = schedule.next();
                let item = &corpus[i];
                let mut tape = Tape::new();
                let p1 = g1.params.bind(&mut tape, true);
                let s = tape.constant(item.features.clone());
                let lo = g1.forward(&mut tape, &p1, s)?;
                let (total, o) = adversarial_update(&mut tape, lo, &item.lbp, &mut d1, &percept, cfg, false)?;
                let g = tape.backward(total)?;
                g1.params.accumulate(&p1, &g);
                g1_opt.step(&mut g1.params);
                step += 1;
                model.step = step;
                let row = row(step, Stage::Lbp, i, &o);
                // Intermediate checkpoints carry the networks trained so far.
                if cfg.checkpoint_every > 0 && step % cfg.checkpoint_every as u64 == 0 {
                    model.g1 = Some(g1.clone());
                    model.d1 = Some(d1.disc.clone());
                }
                emit(&model, &row, &mut observer)?;
            }
            if cfg.stage == Stage::Full {
                let mut g2 = new_unet(Role::G2)?;
                let mut g2_opt = Adam::new(adam);
                let mut d2 = new_gan(Role::D2)?;
                for _ in 0..cfg.steps {
                    let i = schedule.next();
                    let item = &corpus[i];
                    let mut tape = Tape::new();
                    let p1 = g1.params.bind(&mut tape, true);
                    let p2 = g2.params.bind(&mut tape, true);
                    let s = tape.constant(item.features.clone());
                    let lo = g1.forward(&mut tape, &p1, s)?;
                    let joined = tape.concat(s, lo)?;
                    let io = g2.forward(&mut tape, &p2, joined)?;
                    let (total, o) = adversarial_update(&mut tape, io, &item.image, &mut d2, &percept, cfg, true)?;
                    let g = tape.backward(total)?;
                    g1.params.accumulate(&p1, &g);
                    g2.params.accumulate(&p2, &g);
                    g1_opt.step(&mut g1.params);
                    g2_opt.step(&mut g2.params);
                    step += 1;
                    model.step = step;
                    let row = row(step, Stage::Full, i, &o);
                    if cfg.checkpoint_every > 0 && step % cfg.checkpoint_every as u64 == 0 {
                        model.g1 = Some(g1.clone());
                        model.d1 = Some(d1.disc.clone());
                        model.g2 = Some(g2.clone());
                        model.d2 = Some(d2.disc.clone());
                    }
                    emit(&model, &row, &mut observer)?;
                }
                model.g2 = Some(g2);
                model.d2 = Some(d2.disc);
            }
            model.g1 = Some(g1);
            model.d1 = Some(d1.disc);
        }
        Stage::Binary => {
            let mut g = new_unet(Role::G2Prime)?;
            let mut g_opt = Adam::new(adam);
            let mut d = new_gan(Role::D2)?;
            for _ in 0..cfg.steps {
                let i = schedule.next();
                let item = &corpus[i];
                let mut tape = Tape::new();
                let p = g.params.bind(&mut tape, true);
                let x = tape.constant(item.binary.clone());
                let io = g.forward(&mut tape, &p, x)?;
                let (total, o) = adversarial_update(&mut tape, io, &item.image, &mut d, &percept, cfg, true)?;
                let grads = tape.backward(total)?;
                g.params.accumulate(&p, &grads);
                g_opt.step(&mut g.params);
                step += 1;
                model.step = step;
                let row = row(step, Stage::Binary, i, &o);
                if cfg.checkpoint_every > 0 && step % cfg.checkpoint_every as u64 == 0 {
                    model.g2p = Some(g.clone());
                    model.d2 = Some(d.disc.clone());
                }
                emit(&model, &row, &mut observer)?;
            }
            model.g2p = Some(g);
            model.d2 = Some(d.disc);
        }
    }
    Ok(model)
}

fn row(step: u64, phase: Stage, item: usize, o: &Outcome) -> LogRow {
    let [recon, perceptual, style, adversarial, total] = o.values;
    LogRow { step, phase, item, loss_d: o.loss_d, recon, perceptual, style, adversarial, total }
}

/// Mean absolute error of the final output against its target over `corpus`:
/// the LBP target when only G1 exists, otherwise the image.
pub fn corpus_l1(model: &SliModel, corpus: &[TrainItem]) -> Result<f64> {
    let mut total = 0.0;
    for item in corpus {
        let (out, target) = if let (Some(g1), Some(g2)) = (&model.g1, &model.g2) {
            let lo = g1.infer(item.features.clone())?;
            let mut joined = item.features.data().to_vec();
            joined.extend_from_slice(lo.data());
            (g2.infer(Tensor::new(&[1, 129, item.height, item.width], joined)?)?, &item.image)
        } else if let Some(g) = &model.g2p {
            (g.infer(item.binary.clone())?, &item.image)
        } else if let Some(g1) = &model.g1 {
            (g1.infer(item.features.clone())?, &item.lbp)
        } else {
            return Err(SliError::InvalidInput("model has no generator".into()));
        };
        let n = out.numel() as f64;
        total += out.data().iter().zip(target.data()).map(|(a, b)| f64::from((a - b).abs())).sum::<f64>() / n;
    }
    Ok(total / corpus.len() as f64)
}

/// Untrained generators for `cfg`, as [`train`] would start from.
pub fn initial_model(cfg: &TrainConfig) -> Result<SliModel> {
    let mut m = SliModel::empty(cfg.seed, cfg.depth, cfg.base_channels, cfg.disc_channels);
    match cfg.stage {
        Stage::Lbp => m.g1 = Some(UNet::new(m.generator_spec(Role::G1), cfg.seed)?),
        Stage::Full => {
            m.g1 = Some(UNet::new(m.generator_spec(Role::G1), cfg.seed)?);
            m.g2 = Some(UNet::new(m.generator_spec(Role::G2), cfg.seed)?);
        }
        Stage::Binary => m.g2p = Some(UNet::new(m.generator_spec(Role::G2Prime), cfg.seed)?),
    }
    Ok(m)
}
