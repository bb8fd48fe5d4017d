//! Generator, discriminator and perceptual feature networks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use siftleak_grad::{he_normal, Bound, ConvGeom, ParamId, ParamSet, Real, Tape, Tensor, Var};

use crate::error::{Result, SliError};

const KERNEL: usize = 4;
const DOWN: ConvGeom = ConvGeom { stride: 2, pad: 1 };
const FLAT: ConvGeom = ConvGeom { stride: 1, pad: 1 };
const NORM_EPS: f64 = 1e-5;
const SLOPE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    G1,
    G2,
    G2Prime,
    D1,
    D2,
    PerceptNet,
}

impl Role {
    pub fn name(self) -> &'static str {
        match self {
            Role::G1 => "g1",
            Role::G2 => "g2",
            Role::G2Prime => "g2p",
            Role::D1 => "d1",
            Role::D2 => "d2",
            Role::PerceptNet => "percept",
        }
    }

    fn stream(self) -> u64 {
        match self {
            Role::G1 => 1,
            Role::G2 => 2,
            Role::G2Prime => 3,
            Role::D1 => 4,
            Role::D2 => 5,
            Role::PerceptNet => 6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetworkSpec {
    pub role: Role,
    pub depth: usize,
    pub base_channels: usize,
    pub input_channels: usize,
    pub output_channels: usize,
}

impl NetworkSpec {
    /// Channel contract of each role: G1 128->1, G2 129->3, G2' 1->3,
    /// D1 1->logits, D2 3->logits, PerceptNet 3->features.
    pub fn for_role(role: Role, depth: usize, base_channels: usize) -> Self {
        let (input_channels, output_channels) = match role {
            Role::G1 => (128, 1),
            Role::G2 => (129, 3),
            Role::G2Prime => (1, 3),
            Role::D1 => (1, 1),
            Role::D2 => (3, 1),
            Role::PerceptNet => (3, 64),
        };
        Self { role, depth, base_channels, input_channels, output_channels }
    }
}

fn init_rng(seed: u64, role: Role) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(role.stream());
    rng
}

fn conv_weight<T: Real>(rng: &mut ChaCha8Rng, cout: usize, cin: usize, k: usize) -> Tensor<T> {
    he_normal(&[cout, cin, k, k], cin * k * k, rng)
}

/// Transposed-conv weights `(Cin, Cout, k, k)`; each output sees `Cin k^2 / s^2` inputs.
fn deconv_weight<T: Real>(rng: &mut ChaCha8Rng, cin: usize, cout: usize, k: usize, stride: usize) -> Tensor<T> {
    he_normal(&[cin, cout, k, k], cin * k * k / (stride * stride), rng)
}

fn spatial(tape: &Tape<impl Real>, x: Var) -> Result<(usize, usize, usize)> {
    match *tape.shape_of(x) {
        [1, c, h, w] => Ok((c, h, w)),
        ref s => Err(SliError::Shape(format!("expected a (1, C, H, W) input, got {s:?}"))),
    }
}

/// Pruned U-Net: 4x4 stride-2 encoder levels (conv, instance norm,
/// LeakyReLU 0.2) mirrored by deconv levels (instance norm, ReLU) with
/// skip concatenation, closed by a deconv and a sigmoid.
#[derive(Debug, Clone)]
pub struct UNet<T> {
    pub spec: NetworkSpec,
    pub params: ParamSet<T>,
    enc: Vec<ParamId>,
    dec: Vec<ParamId>,
    out_w: ParamId,
    out_b: ParamId,
}

impl<T: Real> UNet<T> {
    pub fn new(spec: NetworkSpec, seed: u64) -> Result<Self> {
        if spec.depth == 0 || spec.base_channels == 0 {
            return Err(SliError::InvalidParameter("U-Net depth and base channels must be positive".into()));
        }
        let mut rng = init_rng(seed, spec.role);
        let ch: Vec<usize> = (0..spec.depth).map(|i| spec.base_channels << i).collect();
        let mut params = ParamSet::new();
        let mut enc = Vec::new();
        let mut cin = spec.input_channels;
        for (i, &c) in ch.iter().enumerate() {
            enc.push(params.add(&format!("enc{i}.w"), conv_weight(&mut rng, c, cin, KERNEL))?);
            cin = c;
        }
        let mut dec = Vec::new();
        for i in (1..spec.depth).rev() {
            let din = if i == spec.depth - 1 { ch[i] } else { 2 * ch[i] };
            dec.push(params.add(&format!("dec{i}.w"), deconv_weight(&mut rng, din, ch[i - 1], KERNEL, 2))?);
        }
        let fin = if spec.depth == 1 { ch[0] } else { 2 * ch[0] };
        let out_w = params.add("out.w", deconv_weight(&mut rng, fin, spec.output_channels, KERNEL, 2))?;
        let out_b = params.add("out.b", Tensor::zeros(&[spec.output_channels]))?;
        Ok(Self { spec, params, enc, dec, out_w, out_b })
    }

    /// Checks the input against the channel contract and the `2^depth` grid.
    pub fn check_input(&self, channels: usize, h: usize, w: usize) -> Result<()> {
        if channels != self.spec.input_channels {
            return Err(SliError::Shape(format!(
                "{} expects {} input channels, got {channels}",
                self.spec.role.name(),
                self.spec.input_channels
            )));
        }
        let f = 1usize << self.spec.depth;
        if h == 0 || w == 0 || h % f != 0 || w % f != 0 || (h / f) * (w / f) < 2 {
            return Err(SliError::Shape(format!(
                "{h}x{w} input does not fit a depth-{} U-Net: sides must be multiples of {f} with at least two bottleneck cells",
                self.spec.depth
            )));
        }
        Ok(())
    }

    pub fn forward(&self, tape: &mut Tape<T>, p: &Bound, x: Var) -> Result<Var> {
        let (c, h, w) = spatial(tape, x)?;
        self.check_input(c, h, w)?;
        let eps = T::lit(NORM_EPS);
        let mut skips = Vec::with_capacity(self.enc.len());
        let mut hcur = x;
        for &wid in &self.enc {
            let y = tape.conv2d(hcur, p.var(wid), None, DOWN)?;
            let y = tape.instance_norm(y, eps)?;
            hcur = tape.leaky_relu(y, T::lit(SLOPE));
            skips.push(hcur);
        }
        skips.pop();
        for &wid in &self.dec {
            let y = tape.deconv2d(hcur, p.var(wid), None, DOWN)?;
            let y = tape.instance_norm(y, eps)?;
            let y = tape.relu(y);
            let skip = skips.pop().expect("one skip per decoder level");
            hcur = tape.concat(y, skip)?;
        }
        let y = tape.deconv2d(hcur, p.var(self.out_w), Some(p.var(self.out_b)), DOWN)?;
        Ok(tape.sigmoid(y))
    }

    /// Gradient-free forward pass returning the output tensor.
    pub fn infer(&self, input: Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape, false);
        let x = tape.constant(input);
        let y = self.forward(&mut tape, &p, x)?;
        Ok(tape.value(y).clone())
    }
}

/// PatchGAN: four 4x4 convolutions with strides 2, 2, 1, 1, LeakyReLU 0.2
/// and instance norm on the two middle layers, ending in a logit map.
#[derive(Debug, Clone)]
pub struct PatchGan<T> {
    pub spec: NetworkSpec,
    pub params: ParamSet<T>,
    w: [ParamId; 4],
    b_first: ParamId,
    b_last: ParamId,
}

pub const MIN_DISCRIMINATOR_SIDE: usize = 16;

impl<T: Real> PatchGan<T> {
    pub fn new(spec: NetworkSpec, seed: u64) -> Result<Self> {
        if spec.base_channels == 0 {
            return Err(SliError::InvalidParameter("discriminator base channels must be positive".into()));
        }
        let mut rng = init_rng(seed, spec.role);
        let b = spec.base_channels;
        let chans = [spec.input_channels, b, 2 * b, 4 * b, 1];
        let mut params = ParamSet::new();
        let mut w = Vec::new();
        for i in 0..4 {
            w.push(params.add(&format!("c{}.w", i + 1), conv_weight(&mut rng, chans[i + 1], chans[i], KERNEL))?);
        }
        let b_first = params.add("c1.b", Tensor::zeros(&[b]))?;
        let b_last = params.add("c4.b", Tensor::zeros(&[1]))?;
        Ok(Self { spec, params, w: [w[0], w[1], w[2], w[3]], b_first, b_last })
    }

    pub fn forward(&self, tape: &mut Tape<T>, p: &Bound, x: Var) -> Result<Var> {
        let (c, h, w) = spatial(tape, x)?;
        if c != self.spec.input_channels {
            return Err(SliError::Shape(format!(
                "{} expects {} channels, got {c}",
                self.spec.role.name(),
                self.spec.input_channels
            )));
        }
        if h < MIN_DISCRIMINATOR_SIDE || w < MIN_DISCRIMINATOR_SIDE {
            return Err(SliError::Shape(format!(
                "discriminator input {h}x{w} is smaller than {MIN_DISCRIMINATOR_SIDE}x{MIN_DISCRIMINATOR_SIDE}"
            )));
        }
        let (eps, slope) = (T::lit(NORM_EPS), T::lit(SLOPE));
        let y = tape.conv2d(x, p.var(self.w[0]), Some(p.var(self.b_first)), DOWN)?;
        let y = tape.leaky_relu(y, slope);
        let y = tape.conv2d(y, p.var(self.w[1]), None, DOWN)?;
        let y = tape.instance_norm(y, eps)?;
        let y = tape.leaky_relu(y, slope);
        let y = tape.conv2d(y, p.var(self.w[2]), None, FLAT)?;
        let y = tape.instance_norm(y, eps)?;
        let y = tape.leaky_relu(y, slope);
        Ok(tape.conv2d(y, p.var(self.w[3]), Some(p.var(self.b_last)), FLAT)?)
    }
}

/// Frozen random feature pyramid standing in for a pretrained backbone:
/// three 3x3 stride-2 convolutions with ReLU (16, 32, 64 channels).
#[derive(Debug, Clone)]
pub struct PerceptNet<T> {
    pub params: ParamSet<T>,
    stages: Vec<(ParamId, ParamId)>,
}

pub const PERCEPT_CHANNELS: [usize; 3] = [16, 32, 64];

impl<T: Real> PerceptNet<T> {
    pub fn new(seed: u64) -> Result<Self> {
        let mut rng = init_rng(seed, Role::PerceptNet);
        let mut params = ParamSet::new();
        let mut stages = Vec::new();
        let mut cin = 3;
        for (i, &c) in PERCEPT_CHANNELS.iter().enumerate() {
            let w = params.add(&format!("s{i}.w"), conv_weight(&mut rng, c, cin, 3))?;
            let b = params.add(&format!("s{i}.b"), Tensor::zeros(&[c]))?;
            stages.push((w, b));
            cin = c;
        }
        Ok(Self { params, stages })
    }

    /// Activations after each stage. Single-channel inputs are repeated to three channels.
    pub fn features(&self, tape: &mut Tape<T>, p: &Bound, x: Var) -> Result<Vec<Var>> {
        let (c, _, _) = spatial(tape, x)?;
        let mut h = match c {
            3 => x,
            1 => tape.tile_channels(x, 3)?,
            _ => return Err(SliError::Shape(format!("perceptual features need 1 or 3 channels, got {c}"))),
        };
        let mut out = Vec::with_capacity(self.stages.len());
        for &(w, b) in &self.stages {
            let y = tape.conv2d(h, p.var(w), Some(p.var(b)), ConvGeom { stride: 2, pad: 1 })?;
            h = tape.relu(y);
            out.push(h);
        }
        Ok(out)
    }
}
