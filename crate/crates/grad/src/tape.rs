//! Recording tape and the differentiable primitives.
//!
//! Every op pushes a node holding its forward value and what its backward
//! rule needs. [`Tape::backward`] walks the nodes in exact reverse order and
//! consumes the tape.

use crate::error::{shape, GradError, Result};
use crate::scalar::Real;
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub stride: usize,
    pub pad: usize,
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    SubScalar(Var, Var),
    Relu(Var),
    LeakyRelu(Var, T),
    Sigmoid(Var),
    Log(Var),
    LogSigmoid(Var),
    Sum(Var),
    Mean(Var),
    AbsSum(Var),
    SqSum(Var),
    Conv2d { x: Var, w: Var, b: Option<Var>, geom: ConvGeom, cols: Vec<T> },
    Deconv2d { x: Var, w: Var, b: Option<Var>, geom: ConvGeom },
    InstanceNorm { x: Var, inv_std: Vec<T> },
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<T>, inv_std: Vec<T>, batch: bool },
    Linear { x: Var, w: Var, b: Var },
    Concat(Var, Var),
    TileChannels(Var, usize),
    SoftmaxXent { logits: Var, labels: Vec<usize>, probs: Vec<T> },
    Gram(Var),
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    requires_grad: bool,
    op: Op<T>,
}

/// Per-node gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of the loss with respect to `v`, if any flowed there.
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

/// Batch statistics reported by [`Tape::batch_norm`] in training mode.
#[derive(Debug, Clone)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

fn dims4(op: &'static str, s: &[usize]) -> Result<(usize, usize, usize, usize)> {
    match *s {
        [n, c, h, w] => Ok((n, c, h, w)),
        _ => Err(GradError::Shape { op, left: s.to_vec(), right: vec![0; 4] }),
    }
}

/// Unfolds `(C, H, W)` into `(C*k*k, Ho*Wo)` patches with zero padding.
#[allow(clippy::too_many_arguments)]
fn im2col<T: Real>(x: &[T], c: usize, h: usize, w: usize, k: usize, g: ConvGeom, ho: usize, wo: usize) -> Vec<T> {
    let mut cols = vec![T::zero(); c * k * k * ho * wo];
    let (s, p) = (g.stride as isize, g.pad as isize);
    for ci in 0..c {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = ((ci * k + ky) * k + kx) * ho * wo;
                for oy in 0..ho {
                    let iy = oy as isize * s + ky as isize - p;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    let dst = &mut cols[row + oy * wo..row + (oy + 1) * wo];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = ox as isize * s + kx as isize - p;
                        if ix >= 0 && ix < w as isize {
                            *d = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters patches back, accumulating into `x`.
#[allow(clippy::too_many_arguments)]
fn col2im<T: Real>(cols: &[T], x: &mut [T], c: usize, h: usize, w: usize, k: usize, g: ConvGeom, ho: usize, wo: usize) {
    let (s, p) = (g.stride as isize, g.pad as isize);
    for ci in 0..c {
        let plane = &mut x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = ((ci * k + ky) * k + kx) * ho * wo;
                for oy in 0..ho {
                    let iy = oy as isize * s + ky as isize - p;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src = &cols[row + oy * wo..row + (oy + 1) * wo];
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, &v) in src.iter().enumerate() {
                        let ix = ox as isize * s + kx as isize - p;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] = dst[ix as usize] + v;
                        }
                    }
                }
            }
        }
    }
}

fn conv_out(len: usize, k: usize, g: ConvGeom) -> Option<usize> {
    let padded = len + 2 * g.pad;
    (padded >= k).then(|| (padded - k) / g.stride + 1)
}

fn deconv_out(len: usize, k: usize, g: ConvGeom) -> Option<usize> {
    ((len - 1) * g.stride + k).checked_sub(2 * g.pad).filter(|&v| v > 0)
}

fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn log_sigmoid<T: Real>(x: T) -> T {
    x.min(T::zero()) - (-x.abs()).exp().ln_1p()
}

/// Row-wise softmax of an `(N, C)` matrix.
pub fn softmax_rows<T: Real>(logits: &[T], classes: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.chunks_exact(classes) {
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let exps: Vec<T> = row.iter().map(|&v| (v - m).exp()).collect();
        let s: T = exps.iter().copied().sum();
        out.extend(exps.into_iter().map(|e| e / s));
    }
    out
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, requires_grad: bool, op: Op<T>) -> Var {
        self.nodes.push(Node { value, requires_grad, op });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape_of(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Records a leaf. Gradients are reported for it only if `requires_grad`.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, requires_grad, Op::Leaf)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    /// Copy of `v`'s value as a fresh constant; no gradient flows back through it.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape_of(a), self.shape_of(b));
        if sa != sb {
            return Err(shape(op, sa, sb));
        }
        Ok(())
    }

    fn zip_map(&mut self, a: Var, b: Var, op: Op<T>, f: impl Fn(T, T) -> T) -> Var {
        let va = self.value(a);
        let vb = self.value(b);
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(va.shape(), data).expect("same shape");
        let rg = self.rg(a) || self.rg(b);
        self.push(value, rg, op)
    }

    fn unary(&mut self, a: Var, op: Op<T>, f: impl Fn(T) -> T) -> Var {
        let va = self.value(a);
        let value = Tensor::new(va.shape(), va.data().iter().map(|&x| f(x)).collect()).expect("same shape");
        let rg = self.rg(a);
        self.push(value, rg, op)
    }

    fn reduce(&mut self, a: Var, op: Op<T>, f: impl Fn(&[T]) -> T) -> Var {
        let v = f(self.value(a).data());
        let rg = self.rg(a);
        self.push(Tensor::scalar(v), rg, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        Ok(self.zip_map(a, b, Op::Add(a, b), |x, y| x + y))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        Ok(self.zip_map(a, b, Op::Sub(a, b), |x, y| x - y))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        Ok(self.zip_map(a, b, Op::Mul(a, b), |x, y| x * y))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        self.unary(a, Op::Scale(a, c), |x| x * c)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -T::one())
    }

    /// `a - s` with `s` a one-element tensor broadcast over `a`.
    pub fn sub_scalar(&mut self, a: Var, s: Var) -> Result<Var> {
        if self.value(s).numel() != 1 {
            return Err(shape("sub_scalar", self.shape_of(a), self.shape_of(s)));
        }
        let sv = self.value(s).item();
        let va = self.value(a);
        let value = Tensor::new(va.shape(), va.data().iter().map(|&x| x - sv).collect()).unwrap();
        let rg = self.rg(a) || self.rg(s);
        Ok(self.push(value, rg, Op::SubScalar(a, s)))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Relu(a), |x| x.max(T::zero()))
    }

    pub fn leaky_relu(&mut self, a: Var, alpha: T) -> Var {
        self.unary(a, Op::LeakyRelu(a, alpha), |x| if x > T::zero() { x } else { alpha * x })
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, Op::Log(a), |x| x.ln())
    }

    /// `log(sigmoid(a))`, evaluated without overflow.
    pub fn log_sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::LogSigmoid(a), log_sigmoid)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        self.reduce(a, Op::Sum(a), |d| d.iter().copied().sum())
    }

    pub fn mean(&mut self, a: Var) -> Var {
        self.reduce(a, Op::Mean(a), |d| d.iter().copied().sum::<T>() / T::lit(d.len() as f64))
    }

    /// Sum of absolute values.
    pub fn abs_sum(&mut self, a: Var) -> Var {
        self.reduce(a, Op::AbsSum(a), |d| d.iter().map(|v| v.abs()).sum())
    }

    /// Sum of squares.
    pub fn sq_sum(&mut self, a: Var) -> Var {
        self.reduce(a, Op::SqSum(a), |d| d.iter().map(|&v| v * v).sum())
    }

    /// 2-D convolution. `x: (N, C, H, W)`, `w: (O, C, k, k)`, `b: (O)`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, geom: ConvGeom) -> Result<Var> {
        let (n, c, h, wd) = dims4("conv2d", self.shape_of(x))?;
        let (o, wc, k, k2) = dims4("conv2d", self.shape_of(w))?;
        if wc != c || k != k2 || geom.stride == 0 {
            return Err(shape("conv2d", self.shape_of(x), self.shape_of(w)));
        }
        if let Some(b) = b {
            if self.shape_of(b) != [o] {
                return Err(shape("conv2d bias", self.shape_of(b), &[o]));
            }
        }
        let (Some(ho), Some(wo)) = (conv_out(h, k, geom), conv_out(wd, k, geom)) else {
            return Err(shape("conv2d", self.shape_of(x), self.shape_of(w)));
        };
        let ckk = c * k * k;
        let hw = ho * wo;
        let mut out = vec![T::zero(); n * o * hw];
        let mut all_cols = Vec::with_capacity(n * ckk * hw);
        {
            let xv = self.value(x).data();
            let wv = self.value(w).data();
            for ni in 0..n {
                let cols = im2col(&xv[ni * c * h * wd..(ni + 1) * c * h * wd], c, h, wd, k, geom, ho, wo);
                let dst = &mut out[ni * o * hw..(ni + 1) * o * hw];
                if let Some(b) = b {
                    let bv = self.value(b).data();
                    for (oi, row) in dst.chunks_exact_mut(hw).enumerate() {
                        row.fill(bv[oi]);
                    }
                }
                T::gemm(o, ckk, hw, T::one(), wv, (ckk as isize, 1), &cols, (hw as isize, 1), T::one(), dst, (hw as isize, 1));
                all_cols.extend_from_slice(&cols);
            }
        }
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        let cols = if self.rg(w) { all_cols } else { Vec::new() };
        Ok(self.push(Tensor::new(&[n, o, ho, wo], out)?, rg, Op::Conv2d { x, w, b, geom, cols }))
    }

    /// Transposed convolution, the adjoint of [`Tape::conv2d`] for the same
    /// weight. `x: (N, Cin, H, W)`, `w: (Cin, Cout, k, k)`, `b: (Cout)`.
    pub fn deconv2d(&mut self, x: Var, w: Var, b: Option<Var>, geom: ConvGeom) -> Result<Var> {
        let (n, cin, h, wd) = dims4("deconv2d", self.shape_of(x))?;
        let (wcin, cout, k, k2) = dims4("deconv2d", self.shape_of(w))?;
        if wcin != cin || k != k2 || geom.stride == 0 || h == 0 || wd == 0 {
            return Err(shape("deconv2d", self.shape_of(x), self.shape_of(w)));
        }
        if let Some(b) = b {
            if self.shape_of(b) != [cout] {
                return Err(shape("deconv2d bias", self.shape_of(b), &[cout]));
            }
        }
        let (Some(ho), Some(wo)) = (deconv_out(h, k, geom), deconv_out(wd, k, geom)) else {
            return Err(shape("deconv2d", self.shape_of(x), self.shape_of(w)));
        };
        if conv_out(ho, k, geom) != Some(h) || conv_out(wo, k, geom) != Some(wd) {
            return Err(shape("deconv2d", self.shape_of(x), self.shape_of(w)));
        }
        let ckk = cout * k * k;
        let hw = h * wd;
        let mut out = vec![T::zero(); n * cout * ho * wo];
        {
            let xv = self.value(x).data();
            let wv = self.value(w).data();
            let mut cols = vec![T::zero(); ckk * hw];
            for ni in 0..n {
                // cols = w^T (ckk x cin) @ x_n (cin x hw)
                T::gemm(
                    ckk, cin, hw, T::one(), wv, (1, ckk as isize),
                    &xv[ni * cin * hw..(ni + 1) * cin * hw], (hw as isize, 1),
                    T::zero(), &mut cols, (hw as isize, 1),
                );
                let dst = &mut out[ni * cout * ho * wo..(ni + 1) * cout * ho * wo];
                col2im(&cols, dst, cout, ho, wo, k, geom, h, wd);
                if let Some(b) = b {
                    let bv = self.value(b).data();
                    for (ci, plane) in dst.chunks_exact_mut(ho * wo).enumerate() {
                        plane.iter_mut().for_each(|v| *v = *v + bv[ci]);
                    }
                }
            }
        }
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        Ok(self.push(Tensor::new(&[n, cout, ho, wo], out)?, rg, Op::Deconv2d { x, w, b, geom }))
    }

    /// Per-sample, per-channel normalization over the spatial plane, no affine part.
    pub fn instance_norm(&mut self, x: Var, eps: T) -> Result<Var> {
        let (n, c, h, w) = dims4("instance_norm", self.shape_of(x))?;
        let m = h * w;
        if m < 2 {
            return Err(shape("instance_norm needs H*W >= 2", self.shape_of(x), &[n, c, 2, 1]));
        }
        let xv = self.value(x).data();
        let mut out = vec![T::zero(); xv.len()];
        let mut inv_std = Vec::with_capacity(n * c);
        let mf = T::lit(m as f64);
        for (src, dst) in xv.chunks_exact(m).zip(out.chunks_exact_mut(m)) {
            let mean = src.iter().copied().sum::<T>() / mf;
            let var = src.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / mf;
            let inv = T::one() / (var + eps).sqrt();
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = (s - mean) * inv;
            }
            inv_std.push(inv);
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(&[n, c, h, w], out)?, rg, Op::InstanceNorm { x, inv_std }))
    }

    /// Batch normalization of `(N, F)` features with batch statistics, then
    /// `gamma * xhat + beta`. Returns the biased batch statistics as well.
    pub fn batch_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<(Var, BatchStats<T>)> {
        let (n, f) = self.matrix_dims("batch_norm", x)?;
        self.check_vec("batch_norm gamma", gamma, f)?;
        self.check_vec("batch_norm beta", beta, f)?;
        if n < 2 {
            return Err(shape("batch_norm needs a batch of at least 2", self.shape_of(x), &[2, f]));
        }
        let xv = self.value(x).data();
        let nf = T::lit(n as f64);
        let mut mean = vec![T::zero(); f];
        let mut var = vec![T::zero(); f];
        for row in xv.chunks_exact(f) {
            mean.iter_mut().zip(row).for_each(|(m, &v)| *m = *m + v);
        }
        mean.iter_mut().for_each(|m| *m = *m / nf);
        for row in xv.chunks_exact(f) {
            for j in 0..f {
                let d = row[j] - mean[j];
                var[j] = var[j] + d * d;
            }
        }
        var.iter_mut().for_each(|v| *v = *v / nf);
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let (xhat, out) = self.affine_rows(x, gamma, beta, &mean, &inv_std);
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        let value = Tensor::new(&[n, f], out)?;
        let v = self.push(value, rg, Op::BatchNorm { x, gamma, beta, xhat, inv_std, batch: true });
        Ok((v, BatchStats { mean, var }))
    }

    /// Batch normalization with fixed (running) statistics.
    pub fn batch_norm_eval(&mut self, x: Var, gamma: Var, beta: Var, mean: &[T], var: &[T], eps: T) -> Result<Var> {
        let (n, f) = self.matrix_dims("batch_norm_eval", x)?;
        self.check_vec("batch_norm gamma", gamma, f)?;
        self.check_vec("batch_norm beta", beta, f)?;
        if mean.len() != f || var.len() != f {
            return Err(shape("batch_norm_eval statistics", &[mean.len(), var.len()], &[f, f]));
        }
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let (xhat, out) = self.affine_rows(x, gamma, beta, mean, &inv_std);
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        let value = Tensor::new(&[n, f], out)?;
        Ok(self.push(value, rg, Op::BatchNorm { x, gamma, beta, xhat, inv_std, batch: false }))
    }

    fn affine_rows(&self, x: Var, gamma: Var, beta: Var, mean: &[T], inv_std: &[T]) -> (Vec<T>, Vec<T>) {
        let xv = self.value(x).data();
        let f = mean.len();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut xhat = vec![T::zero(); xv.len()];
        let mut out = vec![T::zero(); xv.len()];
        for (i, &v) in xv.iter().enumerate() {
            let j = i % f;
            xhat[i] = (v - mean[j]) * inv_std[j];
            out[i] = g[j] * xhat[i] + b[j];
        }
        (xhat, out)
    }

    fn matrix_dims(&self, op: &'static str, x: Var) -> Result<(usize, usize)> {
        match *self.shape_of(x) {
            [n, f] => Ok((n, f)),
            ref s => Err(GradError::Shape { op, left: s.to_vec(), right: vec![0, 0] }),
        }
    }

    fn check_vec(&self, op: &'static str, v: Var, len: usize) -> Result<()> {
        if self.shape_of(v) != [len] {
            return Err(shape(op, self.shape_of(v), &[len]));
        }
        Ok(())
    }

    /// `x @ w^T + b` with `x: (N, in)`, `w: (out, in)`, `b: (out)`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (n, fin) = self.matrix_dims("linear", x)?;
        let (fout, win) = self.matrix_dims("linear", w)?;
        if win != fin {
            return Err(shape("linear", self.shape_of(x), self.shape_of(w)));
        }
        self.check_vec("linear bias", b, fout)?;
        let mut out = Vec::with_capacity(n * fout);
        for _ in 0..n {
            out.extend_from_slice(self.value(b).data());
        }
        T::gemm(
            n, fin, fout, T::one(), self.value(x).data(), (fin as isize, 1),
            self.value(w).data(), (1, fin as isize), T::one(), &mut out, (fout as isize, 1),
        );
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        Ok(self.push(Tensor::new(&[n, fout], out)?, rg, Op::Linear { x, w, b }))
    }

    /// Concatenation along the channel axis of two `(N, C, H, W)` tensors.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, ca, h, w) = dims4("concat", self.shape_of(a))?;
        let (nb, cb, hb, wb) = dims4("concat", self.shape_of(b))?;
        if (n, h, w) != (nb, hb, wb) {
            return Err(shape("concat", self.shape_of(a), self.shape_of(b)));
        }
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        let (sa, sb) = (ca * h * w, cb * h * w);
        let mut out = Vec::with_capacity(va.len() + vb.len());
        for ni in 0..n {
            out.extend_from_slice(&va[ni * sa..(ni + 1) * sa]);
            out.extend_from_slice(&vb[ni * sb..(ni + 1) * sb]);
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(&[n, ca + cb, h, w], out)?, rg, Op::Concat(a, b)))
    }

    /// Repeats a single-channel `(N, 1, H, W)` tensor `times` along channels.
    pub fn tile_channels(&mut self, a: Var, times: usize) -> Result<Var> {
        let (n, c, h, w) = dims4("tile_channels", self.shape_of(a))?;
        if c != 1 || times == 0 {
            return Err(shape("tile_channels", self.shape_of(a), &[n, 1, h, w]));
        }
        let va = self.value(a).data();
        let mut out = Vec::with_capacity(va.len() * times);
        for plane in va.chunks_exact(h * w) {
            for _ in 0..times {
                out.extend_from_slice(plane);
            }
        }
        let rg = self.rg(a);
        Ok(self.push(Tensor::new(&[n, times, h, w], out)?, rg, Op::TileChannels(a, times)))
    }

    /// Mean cross-entropy of row-wise softmax `(N, C)` logits against class labels.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (n, c) = self.matrix_dims("softmax_cross_entropy", logits)?;
        if labels.len() != n || labels.iter().any(|&l| l >= c) {
            return Err(shape("softmax_cross_entropy labels", &[labels.len()], &[n]));
        }
        let lv = self.value(logits).data();
        let probs = softmax_rows(lv, c);
        let mut loss = T::zero();
        for (i, &l) in labels.iter().enumerate() {
            let row = &lv[i * c..(i + 1) * c];
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<T>().ln();
            loss = loss + lse - row[l];
        }
        loss = loss / T::lit(n as f64);
        let rg = self.rg(logits);
        Ok(self.push(Tensor::scalar(loss), rg, Op::SoftmaxXent { logits, labels: labels.to_vec(), probs }))
    }

    /// Channel Gram matrices `F F^T / (C H W)` of a `(N, C, H, W)` activation.
    pub fn gram(&mut self, a: Var) -> Result<Var> {
        let (n, c, h, w) = dims4("gram", self.shape_of(a))?;
        let hw = h * w;
        let norm = T::one() / T::lit((c * hw) as f64);
        let va = self.value(a).data();
        let mut out = vec![T::zero(); n * c * c];
        for ni in 0..n {
            let f = &va[ni * c * hw..(ni + 1) * c * hw];
            T::gemm(c, hw, c, norm, f, (hw as isize, 1), f, (1, hw as isize), T::zero(), &mut out[ni * c * c..(ni + 1) * c * c], (c as isize, 1));
        }
        let rg = self.rg(a);
        Ok(self.push(Tensor::new(&[n, c, c], out)?, rg, Op::Gram(a)))
    }

    /// Reverse pass from the scalar `loss`. Consumes the tape.
    pub fn backward(self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).numel() != 1 {
            return Err(GradError::InvalidParameter(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape_of(loss)
            )));
        }
        let nodes = self.nodes;
        let mut grads: Vec<Option<Vec<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            let node = &nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let mut acc = |v: Var, f: &mut dyn FnMut(&mut [T])| {
                if !nodes[v.0].requires_grad {
                    return;
                }
                let slot = grads[v.0].get_or_insert_with(|| vec![T::zero(); nodes[v.0].value.numel()]);
                f(slot);
            };
            let val = |v: Var| nodes[v.0].value.data();
            let out = node.value.data();
            match node.op {
                Op::Leaf => unreachable!(),
                Op::Add(a, b) => {
                    acc(a, &mut |s| s.iter_mut().zip(&g).for_each(|(s, &g)| *s = *s + g));
                    acc(b, &mut |s| s.iter_mut().zip(&g).for_each(|(s, &g)| *s = *s + g));
                }
                Op::Sub(a, b) => {
                    acc(a, &mut |s| s.iter_mut().zip(&g).for_each(|(s, &g)| *s = *s + g));
                    acc(b, &mut |s| s.iter_mut().zip(&g).for_each(|(s, &g)| *s = *s - g));
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (val(a), val(b));
                    acc(a, &mut |s| (0..s.len()).for_each(|j| s[j] = s[j] + g[j] * vb[j]));
                    acc(b, &mut |s| (0..s.len()).for_each(|j| s[j] = s[j] + g[j] * va[j]));
                }
                Op::Scale(a, c) => acc(a, &mut |s| s.iter_mut().zip(&g).for_each(|(s, &g)| *s = *s + c * g)),
                Op::SubScalar(a, sv) => {
                    acc(a, &mut |s| s.iter_mut().zip(&g).for_each(|(s, &g)| *s = *s + g));
                    let total: T = g.iter().copied().sum();
                    acc(sv, &mut |s| s[0] = s[0] - total);
                }
                Op::Relu(a) => {
                    let va = val(a);
                    acc(a, &mut |s| (0..s.len()).for_each(|j| if va[j] > T::zero() { s[j] = s[j] + g[j] }));
                }
                Op::LeakyRelu(a, alpha) => {
                    let va = val(a);
                    acc(a, &mut |s| {
                        (0..s.len()).for_each(|j| s[j] = s[j] + if va[j] > T::zero() { g[j] } else { alpha * g[j] })
                    });
                }
                Op::Sigmoid(a) => {
                    acc(a, &mut |s| (0..s.len()).for_each(|j| s[j] = s[j] + g[j] * out[j] * (T::one() - out[j])));
                }
                Op::Log(a) => {
                    let va = val(a);
                    acc(a, &mut |s| (0..s.len()).for_each(|j| s[j] = s[j] + g[j] / va[j]));
                }
                Op::LogSigmoid(a) => {
                    let va = val(a);
                    acc(a, &mut |s| (0..s.len()).for_each(|j| s[j] = s[j] + g[j] * sigmoid(-va[j])));
                }
                Op::Sum(a) => acc(a, &mut |s| s.iter_mut().for_each(|s| *s = *s + g[0])),
                Op::Mean(a) => {
                    let d = g[0] / T::lit(val(a).len() as f64);
                    acc(a, &mut |s| s.iter_mut().for_each(|s| *s = *s + d));
                }
                Op::AbsSum(a) => {
                    let va = val(a);
                    acc(a, &mut |s| {
                        (0..s.len()).for_each(|j| {
                            let sg = if va[j] > T::zero() { T::one() } else if va[j] < T::zero() { -T::one() } else { T::zero() };
                            s[j] = s[j] + sg * g[0];
                        })
                    });
                }
                Op::SqSum(a) => {
                    let va = val(a);
                    let two = T::lit(2.0);
                    acc(a, &mut |s| (0..s.len()).for_each(|j| s[j] = s[j] + two * va[j] * g[0]));
                }
                Op::Conv2d { x, w, b, geom, ref cols } => {
                    let (n, c, h, wd) = dims4("conv2d", nodes[x.0].value.shape())?;
                    let (o, _, k, _) = dims4("conv2d", nodes[w.0].value.shape())?;
                    let (_, _, ho, wo) = dims4("conv2d", node.value.shape())?;
                    let (ckk, hw) = (c * k * k, ho * wo);
                    if let Some(b) = b {
                        acc(b, &mut |s| {
                            for ni in 0..n {
                                for (oi, row) in g[ni * o * hw..(ni + 1) * o * hw].chunks_exact(hw).enumerate() {
                                    s[oi] = s[oi] + row.iter().copied().sum();
                                }
                            }
                        });
                    }
                    acc(w, &mut |s| {
                        for ni in 0..n {
                            let gn = &g[ni * o * hw..(ni + 1) * o * hw];
                            let cn = &cols[ni * ckk * hw..(ni + 1) * ckk * hw];
                            T::gemm(o, hw, ckk, T::one(), gn, (hw as isize, 1), cn, (1, hw as isize), T::one(), s, (ckk as isize, 1));
                        }
                    });
                    let wv = val(w);
                    acc(x, &mut |s| {
                        let mut dcols = vec![T::zero(); ckk * hw];
                        for ni in 0..n {
                            let gn = &g[ni * o * hw..(ni + 1) * o * hw];
                            T::gemm(ckk, o, hw, T::one(), wv, (1, ckk as isize), gn, (hw as isize, 1), T::zero(), &mut dcols, (hw as isize, 1));
                            col2im(&dcols, &mut s[ni * c * h * wd..(ni + 1) * c * h * wd], c, h, wd, k, geom, ho, wo);
                        }
                    });
                }
                Op::Deconv2d { x, w, b, geom } => {
                    let (n, cin, h, wd) = dims4("deconv2d", nodes[x.0].value.shape())?;
                    let (_, cout, k, _) = dims4("deconv2d", nodes[w.0].value.shape())?;
                    let (_, _, ho, wo) = dims4("deconv2d", node.value.shape())?;
                    let (ckk, hw, ohw) = (cout * k * k, h * wd, ho * wo);
                    if let Some(b) = b {
                        acc(b, &mut |s| {
                            for ni in 0..n {
                                for (ci, plane) in g[ni * cout * ohw..(ni + 1) * cout * ohw].chunks_exact(ohw).enumerate() {
                                    s[ci] = s[ci] + plane.iter().copied().sum();
                                }
                            }
                        });
                    }
                    let need_w = nodes[w.0].requires_grad;
                    let need_x = nodes[x.0].requires_grad;
                    if need_w || need_x {
                        let gcols: Vec<Vec<T>> = (0..n)
                            .map(|ni| im2col(&g[ni * cout * ohw..(ni + 1) * cout * ohw], cout, ho, wo, k, geom, h, wd))
                            .collect();
                        let xv = val(x);
                        acc(w, &mut |s| {
                            for (ni, gc) in gcols.iter().enumerate() {
                                let xn = &xv[ni * cin * hw..(ni + 1) * cin * hw];
                                T::gemm(cin, hw, ckk, T::one(), xn, (hw as isize, 1), gc, (1, hw as isize), T::one(), s, (ckk as isize, 1));
                            }
                        });
                        let wv = val(w);
                        acc(x, &mut |s| {
                            for (ni, gc) in gcols.iter().enumerate() {
                                let dst = &mut s[ni * cin * hw..(ni + 1) * cin * hw];
                                T::gemm(cin, ckk, hw, T::one(), wv, (ckk as isize, 1), gc, (hw as isize, 1), T::one(), dst, (hw as isize, 1));
                            }
                        });
                    }
                }
                Op::InstanceNorm { x, ref inv_std } => {
                    let m = {
                        let s = nodes[x.0].value.shape();
                        s[2] * s[3]
                    };
                    let mf = T::lit(m as f64);
                    acc(x, &mut |s| {
                        for (((sd, gy), y), &inv) in
                            s.chunks_exact_mut(m).zip(g.chunks_exact(m)).zip(out.chunks_exact(m)).zip(inv_std)
                        {
                            let sum_g: T = gy.iter().copied().sum();
                            let sum_gy: T = gy.iter().zip(y).map(|(&a, &b)| a * b).sum();
                            for j in 0..m {
                                sd[j] = sd[j] + inv / mf * (mf * gy[j] - sum_g - y[j] * sum_gy);
                            }
                        }
                    });
                }
                Op::BatchNorm { x, gamma, beta, ref xhat, ref inv_std, batch } => {
                    let f = inv_std.len();
                    let n = xhat.len() / f;
                    let gam = val(gamma);
                    acc(beta, &mut |s| g.chunks_exact(f).for_each(|row| (0..f).for_each(|j| s[j] = s[j] + row[j])));
                    acc(gamma, &mut |s| {
                        g.chunks_exact(f).zip(xhat.chunks_exact(f)).for_each(|(row, xh)| {
                            (0..f).for_each(|j| s[j] = s[j] + row[j] * xh[j])
                        })
                    });
                    acc(x, &mut |s| {
                        if batch {
                            let nf = T::lit(n as f64);
                            let mut sum_d = vec![T::zero(); f];
                            let mut sum_dx = vec![T::zero(); f];
                            for (row, xh) in g.chunks_exact(f).zip(xhat.chunks_exact(f)) {
                                for j in 0..f {
                                    let d = row[j] * gam[j];
                                    sum_d[j] = sum_d[j] + d;
                                    sum_dx[j] = sum_dx[j] + d * xh[j];
                                }
                            }
                            for ((sr, row), xh) in s.chunks_exact_mut(f).zip(g.chunks_exact(f)).zip(xhat.chunks_exact(f)) {
                                for j in 0..f {
                                    let d = row[j] * gam[j];
                                    sr[j] = sr[j] + inv_std[j] / nf * (nf * d - sum_d[j] - xh[j] * sum_dx[j]);
                                }
                            }
                        } else {
                            for (sr, row) in s.chunks_exact_mut(f).zip(g.chunks_exact(f)) {
                                for j in 0..f {
                                    sr[j] = sr[j] + row[j] * gam[j] * inv_std[j];
                                }
                            }
                        }
                    });
                }
                Op::Linear { x, w, b } => {
                    let s = nodes[x.0].value.shape();
                    let (n, fin) = (s[0], s[1]);
                    let fout = nodes[w.0].value.shape()[0];
                    acc(b, &mut |s| g.chunks_exact(fout).for_each(|row| (0..fout).for_each(|j| s[j] = s[j] + row[j])));
                    let xv = val(x);
                    acc(w, &mut |s| {
                        T::gemm(fout, n, fin, T::one(), &g, (1, fout as isize), xv, (fin as isize, 1), T::one(), s, (fin as isize, 1))
                    });
                    let wv = val(w);
                    acc(x, &mut |s| {
                        T::gemm(n, fout, fin, T::one(), &g, (fout as isize, 1), wv, (fin as isize, 1), T::one(), s, (fin as isize, 1))
                    });
                }
                Op::Concat(a, b) => {
                    let n = node.value.shape()[0];
                    let sa = nodes[a.0].value.numel() / n;
                    let sb = nodes[b.0].value.numel() / n;
                    acc(a, &mut |s| {
                        for ni in 0..n {
                            let src = &g[ni * (sa + sb)..ni * (sa + sb) + sa];
                            s[ni * sa..(ni + 1) * sa].iter_mut().zip(src).for_each(|(d, &v)| *d = *d + v);
                        }
                    });
                    acc(b, &mut |s| {
                        for ni in 0..n {
                            let src = &g[ni * (sa + sb) + sa..(ni + 1) * (sa + sb)];
                            s[ni * sb..(ni + 1) * sb].iter_mut().zip(src).for_each(|(d, &v)| *d = *d + v);
                        }
                    });
                }
                Op::TileChannels(a, times) => {
                    let sh = node.value.shape();
                    let hw = sh[2] * sh[3];
                    acc(a, &mut |s| {
                        for (ni, plane) in s.chunks_exact_mut(hw).enumerate() {
                            for t in 0..times {
                                let src = &g[(ni * times + t) * hw..(ni * times + t + 1) * hw];
                                plane.iter_mut().zip(src).for_each(|(d, &v)| *d = *d + v);
                            }
                        }
                    });
                }
                Op::SoftmaxXent { logits, ref labels, ref probs } => {
                    let n = labels.len();
                    let c = probs.len() / n;
                    let scale = g[0] / T::lit(n as f64);
                    acc(logits, &mut |s| {
                        for (i, &l) in labels.iter().enumerate() {
                            for j in 0..c {
                                let y = if j == l { T::one() } else { T::zero() };
                                s[i * c + j] = s[i * c + j] + scale * (probs[i * c + j] - y);
                            }
                        }
                    });
                }
                Op::Gram(a) => {
                    let (n, c, h, w) = dims4("gram", nodes[a.0].value.shape())?;
                    let hw = h * w;
                    let norm = T::one() / T::lit((c * hw) as f64);
                    let va = val(a);
                    acc(a, &mut |s| {
                        for ni in 0..n {
                            let gn = &g[ni * c * c..(ni + 1) * c * c];
                            let sym: Vec<T> =
                                (0..c * c).map(|idx| gn[idx] + gn[(idx % c) * c + idx / c]).collect();
                            let f = &va[ni * c * hw..(ni + 1) * c * hw];
                            T::gemm(c, c, hw, norm, &sym, (c as isize, 1), f, (hw as isize, 1), T::one(), &mut s[ni * c * hw..(ni + 1) * c * hw], (hw as isize, 1));
                        }
                    });
                }
            }
        }
        Ok(Gradients { grads })
    }
}
