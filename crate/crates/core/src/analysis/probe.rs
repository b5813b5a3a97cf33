//! Multinomial logistic-regression probe over frozen representations,
//! with an optional single-hidden-layer variant behind a flag.

use crate::model::argmax_rows;
use crate::tensor::{ParamId, ParamStore, Tape, Tensor, TensorError, TensorRef};
use crate::training::AdamState;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// Hidden width for the nonlinear variant; `None` keeps the probe linear.
    pub hidden: Option<usize>,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            learning_rate: 0.05,
            hidden: None,
            seed: 0,
        }
    }
}

pub struct ProbeModel {
    store: ParamStore,
    hidden: Option<(ParamId, ParamId)>,
    out: (ParamId, ParamId),
    feature_mean: Vec<f64>,
    feature_scale: Vec<f64>,
}

impl ProbeModel {
    fn standardize(&self, x: &Tensor) -> Tensor {
        let w = x.shape()[1];
        let mut data = Vec::with_capacity(x.numel());
        for r in 0..x.shape()[0] {
            for (j, &v) in x.row(r).iter().enumerate() {
                data.push((v - self.feature_mean[j]) / self.feature_scale[j]);
            }
        }
        Tensor::from_vec(vec![x.shape()[0], w], data).expect("same shape")
    }

    fn logits(&self, tape: &mut Tape, x: TensorRef) -> Result<TensorRef, TensorError> {
        let mut h = x;
        if let Some((w, b)) = self.hidden {
            let wr = tape.param(&self.store, w);
            let br = tape.param(&self.store, b);
            h = tape.affine(h, wr, br)?;
            h = tape.relu(h)?;
        }
        let wr = tape.param(&self.store, self.out.0);
        let br = tape.param(&self.store, self.out.1);
        tape.affine(h, wr, br)
    }

    pub fn predict(&self, x: &Tensor) -> Vec<usize> {
        let std = self.standardize(x);
        let mut tape = Tape::new();
        let xr = tape.constant(std);
        let logits = self.logits(&mut tape, xr).expect("probe forward");
        argmax_rows(tape.value(logits))
    }
}

/// Full-batch Adam on softmax cross-entropy for a fixed budget of epochs
/// (features are standardized from the training set, so the budget reaches
/// convergence for linear probes at these scales).
pub fn train_probe(
    x: &Tensor,
    y: &[usize],
    classes: usize,
    cfg: &ProbeConfig,
) -> Result<ProbeModel, TensorError> {
    assert_eq!(x.shape()[0], y.len());
    if classes < 2 {
        return Err(TensorError::Domain {
            op: "probe",
            detail: "degenerate single-class target".into(),
        });
    }
    let (n, d) = (x.shape()[0], x.shape()[1]);
    let mut mean = vec![0.0; d];
    for r in 0..n {
        for (m, &v) in mean.iter_mut().zip(x.row(r)) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut var = vec![0.0; d];
    for r in 0..n {
        for (s, (&v, m)) in var.iter_mut().zip(x.row(r).iter().zip(&mean)) {
            *s += (v - m) * (v - m);
        }
    }
    let scale: Vec<f64> = var
        .iter()
        .map(|s| (s / n as f64).sqrt().max(1e-8))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut store = ParamStore::new();
    let hidden = match cfg.hidden {
        Some(h) => {
            let init: Vec<f64> = (0..d * h)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    z / (d as f64).sqrt()
                })
                .collect();
            let w = store.add("probe/hidden/w", Tensor::from_vec(vec![d, h], init)?)?;
            let b = store.add("probe/hidden/b", Tensor::zeros(&[h]))?;
            Some((w, b))
        }
        None => None,
    };
    let out_in = cfg.hidden.unwrap_or(d);
    let out_w = store.add("probe/out/w", Tensor::zeros(&[out_in, classes]))?;
    let out_b = store.add("probe/out/b", Tensor::zeros(&[classes]))?;

    let mut probe = ProbeModel {
        store,
        hidden,
        out: (out_w, out_b),
        feature_mean: mean,
        feature_scale: scale,
    };

    let xs = probe.standardize(x);
    let onehot = crate::model::one_hot(y, classes);
    let mut adam = AdamState::new(&probe.store);
    for _ in 0..cfg.epochs {
        let mut tape = Tape::new();
        let xr = tape.constant(xs.clone());
        let logits = probe.logits(&mut tape, xr)?;
        let lse = tape.logsumexp_keepdim(logits, 1)?;
        let lse = tape.reshape(lse, &[n])?;
        let oh = tape.constant(onehot.clone());
        let picked = tape.mul(logits, oh)?;
        let true_logit = tape.sum(picked, Some(1))?;
        let ce = tape.sub(lse, true_logit)?;
        let loss = tape.mean(ce, None)?;
        probe.store.zero_grads();
        tape.backward(loss, &mut probe.store)?;
        adam.step(&mut probe.store, cfg.learning_rate, 0.9, 0.999, 1e-8)
            .map_err(|e| TensorError::Domain {
                op: "probe",
                detail: e.to_string(),
            })?;
    }
    Ok(probe)
}

pub fn probe_accuracy(probe: &ProbeModel, x: &Tensor, y: &[usize]) -> f64 {
    assert!(!y.is_empty());
    let pred = probe.predict(x);
    let correct = pred.iter().zip(y).filter(|(p, l)| p == l).count();
    correct as f64 / y.len() as f64
}
