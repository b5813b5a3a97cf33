//! Adam with bias correction, plus global-norm gradient clipping.

use super::TrainError;
use crate::tensor::ParamStore;

#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl AdamState {
    pub fn new(store: &ParamStore) -> Self {
        let m = store.ids().map(|id| vec![0.0; store.get(id).value.numel()]).collect();
        let v = store.ids().map(|id| vec![0.0; store.get(id).value.numel()]).collect();
        Self { m, v, t: 0 }
    }

    /// One update over every parameter from its accumulated gradient.
    /// Non-finite gradients abort with a diagnostic naming the parameter.
    pub fn step(
        &mut self,
        store: &mut ParamStore,
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
    ) -> Result<(), TrainError> {
        self.t += 1;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for (i, id) in store.ids().collect::<Vec<_>>().into_iter().enumerate() {
            let name = store.get(id).name.clone();
            let p = store.get_mut(id);
            let grads = p.grad.data().to_vec();
            if let Some(bad) = grads.iter().find(|g| !g.is_finite()) {
                return Err(TrainError::NonFiniteGradient {
                    param: name,
                    value: *bad,
                });
            }
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let w = p.value.data_mut();
            for j in 0..grads.len() {
                let g = grads[j];
                m[j] = beta1 * m[j] + (1.0 - beta1) * g;
                v[j] = beta2 * v[j] + (1.0 - beta2) * g * g;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                w[j] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Scale all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the pre-clip norm.
pub fn clip_global_norm(store: &mut ParamStore, max_norm: f64) -> f64 {
    let mut sq = 0.0;
    for id in store.ids().collect::<Vec<_>>() {
        for g in store.get(id).grad.data() {
            sq += g * g;
        }
    }
    let norm = sq.sqrt();
    if norm > max_norm && norm.is_finite() {
        let scale = max_norm / norm;
        for id in store.ids().collect::<Vec<_>>() {
            for g in store.get_mut(id).grad.data_mut() {
                *g *= scale;
            }
        }
    }
    norm
}
