//! Parameter initialization.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::tensor::{Element, Tensor};

/// Deterministic RNG for model construction and data generation.
pub fn seeded_rng(seed: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(seed)
}

/// Truncated normal: N(0, std^2) with samples beyond 2 std re-drawn.
pub fn trunc_normal<E: Element>(shape: Vec<usize>, std: f64, rng: &mut ChaCha12Rng) -> Tensor<E> {
    let numel: usize = shape.iter().product();
    let mut data = Vec::with_capacity(numel);
    while data.len() < numel {
        let z: f64 = StandardNormal.sample(rng);
        if z.abs() <= 2.0 {
            data.push(E::from_f64(z * std));
        }
    }
    Tensor::new(shape, data).expect("length matches by construction")
}

/// Uniform values in [lo, hi), mostly for test fixtures and synthetic data.
pub fn uniform<E: Element>(
    shape: Vec<usize>,
    lo: f64,
    hi: f64,
    rng: &mut ChaCha12Rng,
) -> Tensor<E> {
    let numel: usize = shape.iter().product();
    let data = (0..numel)
        .map(|_| E::from_f64(rng.random_range(lo..hi)))
        .collect();
    Tensor::new(shape, data).expect("length matches by construction")
}
