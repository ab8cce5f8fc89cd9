//! Named, ordered parameter storage.
//!
//! A `ParamStore` owns every tensor of one model instance: trainable
//! parameters and non-trainable buffers (batch-norm running statistics).
//! Iteration order is insertion order and is the canonical order for
//! optimizers and checkpoints.

use indexmap::IndexMap;
use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::tape::{Tape, VarId};
use crate::tensor::{Element, Tensor};

#[derive(Debug, Clone)]
pub struct ParamEntry<E: Element> {
    pub tensor: Tensor<E>,
    pub trainable: bool,
}

#[derive(Debug, Clone, Default)]
pub struct ParamStore<E: Element> {
    entries: IndexMap<String, ParamEntry<E>>,
}

impl<E: Element> ParamStore<E> {
    pub fn new() -> Self {
        ParamStore {
            entries: IndexMap::new(),
        }
    }

    /// Insert a tensor under a unique name.
    pub fn insert(
        &mut self,
        name: impl Into<String>,
        tensor: Tensor<E>,
        trainable: bool,
    ) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::Contract(format!("duplicate parameter name {name}")));
        }
        self.entries.insert(name, ParamEntry { tensor, trainable });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<E>> {
        self.entries
            .get(name)
            .map(|e| &e.tensor)
            .ok_or_else(|| Error::Contract(format!("unknown parameter {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<E>> {
        self.entries
            .get_mut(name)
            .map(|e| &mut e.tensor)
            .ok_or_else(|| Error::Contract(format!("unknown parameter {name}")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ParamEntry<E>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut ParamEntry<E>)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    /// Total number of trainable scalar values.
    pub fn num_trainable(&self) -> u64 {
        self.entries
            .values()
            .filter(|e| e.trainable)
            .map(|e| e.tensor.numel() as u64)
            .sum()
    }

    pub fn zero_grads(&mut self) {
        for e in self.entries.values_mut() {
            e.tensor.zero_grad();
        }
    }

    /// Record every trainable tensor as a requires-grad leaf on `tape`.
    pub fn bind(&self, tape: &mut Tape<E>) -> BoundParams {
        let mut vars = HashMap::new();
        for (name, e) in &self.entries {
            if e.trainable {
                let id = tape.leaf(e.tensor.shape(), e.tensor.data(), true);
                tape.set_label(id, name.clone());
                vars.insert(name.clone(), id);
            }
        }
        BoundParams { vars }
    }

    /// Pull gradients off a backward-completed tape into the store.
    pub fn absorb_grads(&mut self, tape: &Tape<E>, bound: &BoundParams) {
        for (name, &id) in &bound.vars {
            if let Some(g) = tape.grad(id) {
                if let Some(e) = self.entries.get_mut(name) {
                    e.tensor.accumulate_grad(g);
                }
            }
        }
    }

    /// Cast the whole store to another element type (grads dropped).
    pub fn cast<T: Element>(&self) -> ParamStore<T> {
        let mut out = ParamStore::new();
        for (name, e) in &self.entries {
            out.entries.insert(
                name.clone(),
                ParamEntry {
                    tensor: e.tensor.cast(),
                    trainable: e.trainable,
                },
            );
        }
        out
    }
}

/// Map from parameter name to its leaf on the current tape.
#[derive(Debug, Clone)]
pub struct BoundParams {
    vars: HashMap<String, VarId>,
}

impl BoundParams {
    /// Leaf id of a bound parameter. Panics on unknown names: parameter
    /// layouts are fixed at build time, so a miss is a programming error.
    pub fn var(&self, name: &str) -> VarId {
        *self
            .vars
            .get(name)
            .unwrap_or_else(|| panic!("parameter {name} not bound on this tape"))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.vars.keys().map(|s| s.as_str())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_names_rejected() {
        let mut ps = ParamStore::<f64>::new();
        ps.insert("w", Tensor::zeros(vec![2]), true).unwrap();
        assert!(ps.insert("w", Tensor::zeros(vec![2]), true).is_err());
    }

    #[test]
    fn bind_and_absorb_roundtrip() {
        let mut ps = ParamStore::<f64>::new();
        ps.insert("w", Tensor::new(vec![2], vec![3.0, 4.0]).unwrap(), true)
            .unwrap();
        ps.insert("buf", Tensor::zeros(vec![2]), false).unwrap();
        let mut tape = Tape::new();
        let bound = ps.bind(&mut tape);
        let w = bound.var("w");
        let sq = tape.mul(w, w).unwrap();
        let loss = tape.sum_all(sq).unwrap();
        tape.backward(loss).unwrap();
        ps.absorb_grads(&tape, &bound);
        assert_eq!(ps.get("w").unwrap().grad.as_deref(), Some(&[6.0, 8.0][..]));
        assert!(ps.get("buf").unwrap().grad.is_none());
    }
}
