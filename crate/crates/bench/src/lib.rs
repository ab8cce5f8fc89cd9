//! Shared fixtures for the benchmark targets.

use dhvt_core::init::seeded_rng;
use dhvt_core::tensor::{Element, Tensor};
use rand::Rng;

pub use dhvt_core;

/// Deterministic random tensor for benchmark inputs.
pub fn random_tensor<E: Element>(shape: Vec<usize>, seed: u64) -> Tensor<E> {
    let mut rng = seeded_rng(seed);
    let numel: usize = shape.iter().product();
    let data = (0..numel)
        .map(|_| E::from_f64(rng.random_range(-1.0..1.0)))
        .collect();
    Tensor::new(shape, data).expect("length matches by construction")
}
