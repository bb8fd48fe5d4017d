//! Named parameter storage and its binding onto a tape.

use crate::error::{shape, GradError, Result};
use crate::scalar::Real;
use crate::tape::{Gradients, Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

/// Ordered collection of named tensors with gradient accumulators.
///
/// Entries added as buffers (running statistics and the like) are stored
/// and checkpointed, but never receive gradients or optimizer updates.
#[derive(Debug, Clone, Default)]
pub struct ParamSet<T> {
    names: Vec<String>,
    values: Vec<Tensor<T>>,
    grads: Vec<Vec<T>>,
    trainable: Vec<bool>,
}

/// Tape handles of a [`ParamSet`] bound for one forward pass.
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }
}

impl<T: Real> ParamSet<T> {
    pub fn new() -> Self {
        Self { names: Vec::new(), values: Vec::new(), grads: Vec::new(), trainable: Vec::new() }
    }

    fn insert(&mut self, name: &str, value: Tensor<T>, trainable: bool) -> Result<ParamId> {
        if self.names.iter().any(|n| n == name) {
            return Err(GradError::InvalidParameter(format!("duplicate parameter name {name}")));
        }
        self.names.push(name.to_string());
        self.grads.push(vec![T::zero(); value.numel()]);
        self.values.push(value);
        self.trainable.push(trainable);
        Ok(ParamId(self.names.len() - 1))
    }

    pub fn add(&mut self, name: &str, value: Tensor<T>) -> Result<ParamId> {
        self.insert(name, value, true)
    }

    pub fn add_buffer(&mut self, name: &str, value: Tensor<T>) -> Result<ParamId> {
        self.insert(name, value, false)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.names.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.trainable[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.values[id.0]
    }

    pub fn grad(&self, id: ParamId) -> &[T] {
        &self.grads[id.0]
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut [T] {
        &mut self.grads[id.0]
    }

    /// Number of trainable scalars.
    pub fn trainable_count(&self) -> usize {
        self.values.iter().zip(&self.trainable).filter(|(_, &t)| t).map(|(v, _)| v.numel()).sum()
    }

    /// Records every entry as a leaf. Trainable entries require gradients
    /// only when `requires_grad` is set; buffers never do.
    pub fn bind(&self, tape: &mut Tape<T>, requires_grad: bool) -> Bound {
        let vars = self
            .values
            .iter()
            .zip(&self.trainable)
            .map(|(v, &t)| tape.leaf(v.clone(), requires_grad && t))
            .collect();
        Bound { vars }
    }

    /// Adds the gradients reaching `bound` into the accumulators.
    pub fn accumulate(&mut self, bound: &Bound, grads: &Gradients<T>) {
        for (i, &v) in bound.vars.iter().enumerate() {
            if let Some(g) = grads.get(v) {
                self.grads[i].iter_mut().zip(g).for_each(|(a, &b)| *a = *a + b);
            }
        }
    }

    pub fn zero_grads(&mut self) {
        self.grads.iter_mut().for_each(|g| g.iter_mut().for_each(|v| *v = T::zero()));
    }

    pub fn cast<U: Real>(&self) -> ParamSet<U> {
        ParamSet {
            names: self.names.clone(),
            values: self.values.iter().map(Tensor::cast).collect(),
            grads: self.grads.iter().map(|g| vec![U::zero(); g.len()]).collect(),
            trainable: self.trainable.clone(),
        }
    }

    /// Entries as `(prefix + name, value)` pairs, for checkpointing.
    pub fn named_f32(&self, prefix: &str) -> Vec<(String, Tensor<f32>)> {
        self.names.iter().zip(&self.values).map(|(n, v)| (format!("{prefix}{n}"), v.cast())).collect()
    }

    /// Overwrites every entry from `(prefix + name, value)` pairs. Each entry
    /// must be present with an identical shape.
    pub fn load_named_f32(&mut self, prefix: &str, tensors: &[(String, Tensor<f32>)]) -> Result<()> {
        for i in 0..self.names.len() {
            let key = format!("{prefix}{}", self.names[i]);
            let Some((_, t)) = tensors.iter().find(|(n, _)| *n == key) else {
                return Err(GradError::Format(format!("checkpoint lacks tensor {key}")));
            };
            if t.shape() != self.values[i].shape() {
                return Err(shape("checkpoint tensor", t.shape(), self.values[i].shape()));
            }
            self.values[i] = t.cast();
        }
        Ok(())
    }
}
