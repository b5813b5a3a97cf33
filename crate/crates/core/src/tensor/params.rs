//! Named trainable parameters with persistent gradient buffers.

use super::{Result, Tensor, TensorError};
use std::collections::HashMap;

/// Index of a parameter inside its [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

/// A trainable tensor. `requires_grad` is always true for parameters; the
/// gradient buffer persists across tapes and accumulates until zeroed.
#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

/// Flat collection of parameters with unique slash-separated names
/// (e.g. `"decoder/layer0/weight"`). Creation order is part of a model's
/// identity: it fixes both initialization and checkpoint layout.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
    by_name: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, value: Tensor) -> Result<ParamId> {
        if self.by_name.contains_key(name) {
            return Err(TensorError::DuplicateParam(name.to_string()));
        }
        let grad = Tensor::zeros(value.shape());
        let id = self.params.len();
        self.by_name.insert(name.to_string(), id);
        self.params.push(Parameter {
            name: name.to_string(),
            value,
            grad,
        });
        Ok(ParamId(id))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn id_by_name(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied().map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            for g in p.grad.data_mut() {
                *g = 0.0;
            }
        }
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub(crate) fn accumulate_grad(&mut self, id: ParamId, delta: &[f64]) {
        let g = self.params[id.0].grad.data_mut();
        debug_assert_eq!(g.len(), delta.len());
        for (gi, di) in g.iter_mut().zip(delta) {
            *gi += di;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unique() {
        let mut store = ParamStore::new();
        store.add("w", Tensor::zeros(&[2])).unwrap();
        assert!(matches!(
            store.add("w", Tensor::zeros(&[2])).unwrap_err(),
            TensorError::DuplicateParam(_)
        ));
    }

    #[test]
    fn grads_accumulate_and_zero() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::zeros(&[2])).unwrap();
        store.accumulate_grad(id, &[1.0, 2.0]);
        store.accumulate_grad(id, &[1.0, 2.0]);
        assert_eq!(store.get(id).grad.data(), &[2.0, 4.0]);
        store.zero_grads();
        assert_eq!(store.get(id).grad.data(), &[0.0, 0.0]);
    }
}
