//! AdamW with decoupled weight decay.

use indexmap::IndexMap;

use crate::params::ParamStore;
use crate::tensor::Element;

#[derive(Debug, Clone, Copy)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

struct Moments<E> {
    m: Vec<E>,
    v: Vec<E>,
}

/// Optimizer state: first/second moments per parameter, allocated lazily on
/// the first step that sees a gradient for that parameter.
pub struct AdamW<E: Element> {
    cfg: AdamWConfig,
    step: u64,
    moments: IndexMap<String, Moments<E>>,
}

impl<E: Element> AdamW<E> {
    pub fn new(cfg: AdamWConfig) -> Self {
        AdamW {
            cfg,
            step: 0,
            moments: IndexMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update over every trainable parameter that has a gradient.
    /// Decay is decoupled: `p -= lr * wd * p` on the pre-update value, in
    /// addition to the bias-corrected moment step. Gradients are cleared.
    pub fn step(&mut self, params: &mut ParamStore<E>, lr: f64) {
        self.step += 1;
        let t = self.step as i32;
        let b1 = E::from_f64(self.cfg.beta1);
        let b2 = E::from_f64(self.cfg.beta2);
        let one_minus_b1 = E::from_f64(1.0 - self.cfg.beta1);
        let one_minus_b2 = E::from_f64(1.0 - self.cfg.beta2);
        let bc1 = E::from_f64(1.0 - self.cfg.beta1.powi(t));
        let bc2 = E::from_f64(1.0 - self.cfg.beta2.powi(t));
        let eps = E::from_f64(self.cfg.eps);
        let lr_e = E::from_f64(lr);
        let decay = E::from_f64(lr * self.cfg.weight_decay);

        for (name, entry) in params.iter_mut() {
            if !entry.trainable {
                continue;
            }
            let Some(grad) = entry.tensor.grad.take() else {
                continue;
            };
            let n = grad.len();
            let slot = self
                .moments
                .entry(name.to_string())
                .or_insert_with(|| Moments {
                    m: vec![E::zero(); n],
                    v: vec![E::zero(); n],
                });
            let data = entry.tensor.data_mut();
            for i in 0..n {
                let g = grad[i];
                slot.m[i] = b1 * slot.m[i] + one_minus_b1 * g;
                slot.v[i] = b2 * slot.v[i] + one_minus_b2 * g * g;
                let m_hat = slot.m[i] / bc1;
                let v_hat = slot.v[i] / bc2;
                let p = data[i];
                data[i] = p - lr_e * m_hat / (v_hat.sqrt() + eps) - decay * p;
            }
        }
    }
}
