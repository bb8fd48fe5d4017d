use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::scalar::Real;
use crate::tensor::Tensor;

/// He-normal initialization: zero mean, standard deviation `sqrt(2 / fan_in)`.
pub fn he_normal<T: Real, R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor<T> {
    let std = (2.0 / fan_in.max(1) as f64).sqrt();
    let dist = Normal::new(0.0, std).expect("finite std");
    let n = shape.iter().product();
    let data = (0..n).map(|_| T::lit(dist.sample(rng))).collect();
    Tensor::new(shape, data).expect("shape within limits")
}
