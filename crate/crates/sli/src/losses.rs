//! Reconstruction, perceptual, style and relativistic-average adversarial losses.

use siftleak_grad::{Bound, Real, Tape, Var};

use crate::error::{Result, SliError};
use crate::nets::PerceptNet;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda_r: f64,
    pub lambda_p: f64,
    pub lambda_s: f64,
    pub lambda_g: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda_r: 100.0, lambda_p: 1.0, lambda_s: 10.0, lambda_g: 0.2 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.lambda_r, self.lambda_p, self.lambda_s, self.lambda_g];
        if all.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(SliError::InvalidParameter(format!("loss weights must be finite and >= 0: {self:?}")));
        }
        Ok(())
    }
}

fn mean_abs<T: Real>(tape: &mut Tape<T>, d: Var) -> Var {
    let n = tape.value(d).numel();
    let s = tape.abs_sum(d);
    tape.scale(s, T::lit(1.0 / n as f64))
}

fn mean_sq<T: Real>(tape: &mut Tape<T>, d: Var) -> Var {
    let n = tape.value(d).numel();
    let s = tape.sq_sum(d);
    tape.scale(s, T::lit(1.0 / n as f64))
}

fn sum_all<T: Real>(tape: &mut Tape<T>, terms: &[Var]) -> Result<Var> {
    let mut acc = terms[0];
    for &t in &terms[1..] {
        acc = tape.add(acc, t)?;
    }
    Ok(acc)
}

/// Mean absolute error.
pub fn recon<T: Real>(tape: &mut Tape<T>, out: Var, gt: Var) -> Result<Var> {
    let d = tape.sub(out, gt)?;
    Ok(mean_abs(tape, d))
}

/// Sum over the three feature stages of the mean squared activation difference.
pub fn perceptual<T: Real>(tape: &mut Tape<T>, net: &PerceptNet<T>, p: &Bound, out: Var, gt: Var) -> Result<Var> {
    let fo = net.features(tape, p, out)?;
    let fg = net.features(tape, p, gt)?;
    let mut terms = Vec::with_capacity(fo.len());
    for (a, b) in fo.into_iter().zip(fg) {
        let d = tape.sub(a, b)?;
        terms.push(mean_sq(tape, d));
    }
    sum_all(tape, &terms)
}

/// Sum over the feature stages of the mean squared difference of channel Gram matrices.
pub fn style<T: Real>(tape: &mut Tape<T>, net: &PerceptNet<T>, p: &Bound, out: Var, gt: Var) -> Result<Var> {
    let fo = net.features(tape, p, out)?;
    let fg = net.features(tape, p, gt)?;
    let mut terms = Vec::with_capacity(fo.len());
    for (a, b) in fo.into_iter().zip(fg) {
        let ga = tape.gram(a)?;
        let gb = tape.gram(b)?;
        let d = tape.sub(ga, gb)?;
        terms.push(mean_sq(tape, d));
    }
    sum_all(tape, &terms)
}

/// Relativistic average losses `(loss_D, loss_G)` from real and fake logit
/// maps. Expectations are spatial means over the maps.
pub fn ragan<T: Real>(tape: &mut Tape<T>, real: Var, fake: Var) -> Result<(Var, Var)> {
    if tape.shape_of(real) != tape.shape_of(fake) {
        return Err(SliError::Shape(format!(
            "real logits {:?} vs fake logits {:?}",
            tape.shape_of(real),
            tape.shape_of(fake)
        )));
    }
    let mean_real = tape.mean(real);
    let mean_fake = tape.mean(fake);
    let rel_real = tape.sub_scalar(real, mean_fake)?;
    let rel_fake = tape.sub_scalar(fake, mean_real)?;
    let neg_real = tape.neg(rel_real);
    let neg_fake = tape.neg(rel_fake);
    // log(1 - sigmoid(z)) = log_sigmoid(-z)
    let terms = |tape: &mut Tape<T>, pos: Var, neg: Var| -> Result<Var> {
        let a = tape.log_sigmoid(pos);
        let a = tape.mean(a);
        let b = tape.log_sigmoid(neg);
        let b = tape.mean(b);
        let s = tape.add(a, b)?;
        Ok(tape.neg(s))
    };
    let loss_d = terms(tape, rel_real, neg_fake)?;
    let loss_g = terms(tape, rel_fake, neg_real)?;
    Ok((loss_d, loss_g))
}

/// Loss terms of one generator update. `style` is absent for the LBP stage.
#[derive(Debug, Clone, Copy)]
pub struct GeneratorTerms {
    pub recon: Var,
    pub perceptual: Var,
    pub style: Option<Var>,
    pub adversarial: Var,
}

/// `lambda_r Lr + lambda_p Lp (+ lambda_s Ls) + lambda_g Ladv`.
pub fn generator_total<T: Real>(tape: &mut Tape<T>, w: &LossWeights, t: &GeneratorTerms) -> Result<Var> {
    let mut parts = vec![
        tape.scale(t.recon, T::lit(w.lambda_r)),
        tape.scale(t.perceptual, T::lit(w.lambda_p)),
        tape.scale(t.adversarial, T::lit(w.lambda_g)),
    ];
    if let Some(s) = t.style {
        parts.push(tape.scale(s, T::lit(w.lambda_s)));
    }
    sum_all(tape, &parts)
}
