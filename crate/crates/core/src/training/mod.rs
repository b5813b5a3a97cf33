//! Stochastic training loop, evaluation metrics and reproducibility control.
//!
//! Every reported number is a deterministic function of (seed, config, data):
//! shuffling and noise run on dedicated counter-based RNG streams, evaluation
//! uses a fixed seed, and the reported model is the best-validation-accuracy
//! epoch.

mod adam;
mod checkpoint;

pub use adam::{clip_global_norm, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint};

use crate::data::{batch_from, LabeledExample, SplitSet};
use crate::model::{argmax_rows, Model, ModelKind, NoiseBundle};
use crate::tensor::{Tape, TensorError};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Fixed seed for evaluation-time latent sampling, so metrics are stable
/// across epochs and runs.
pub const EVAL_SEED: u64 = 0x5EED_CAFE;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite gradient in parameter {param:?} ({value}) after clipping")]
    NonFiniteGradient { param: String, value: f64 },
    #[error("training aborted at epoch {epoch}, step {step}: {detail}")]
    NanAbort {
        epoch: usize,
        step: usize,
        detail: String,
        report: TrainReport,
    },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TempSchedule {
    /// Keep the model's configured temperature (default).
    Constant,
    /// Linear ramp from `start` to `end` across epochs (annealing hook,
    /// off by default).
    Anneal { start: f64, end: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Overrides the model's ζ when set.
    pub zeta: Option<f64>,
    pub temperature: TempSchedule,
    pub clip_norm: f64,
    /// Train on straight-through hard mask samples instead of the soft
    /// relaxation (default off). Keeps the training-time mask distribution
    /// identical to the hard samples used by evaluation and analysis.
    #[serde(default)]
    pub hard_latent: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            epochs: 100,
            batch_size: 64,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            zeta: None,
            temperature: TempSchedule::Constant,
            clip_norm: 10.0,
            hard_latent: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TensorError> {
        if self.learning_rate <= 0.0 || self.batch_size == 0 || self.clip_norm <= 0.0 {
            return Err(TensorError::Domain {
                op: "train_config",
                detail: "rates and sizes must be positive".into(),
            });
        }
        Ok(())
    }
}

/// One epoch of accounting. Loss terms are dataset-unit totals for the
/// epoch (per-example terms summed over all examples; `kl_sticks` sums the
/// per-batch batch/N shares, so with frozen sticks it equals the full
/// dataset stick-KL). Wall-clock is timing metadata and stays out of the
/// deterministic CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub recon_nll: f64,
    pub kl_sticks: f64,
    pub kl_bernoulli: f64,
    pub kl_gaussian: f64,
    pub cross_entropy: f64,
    pub val_accuracy: f64,
    pub active_mean: f64,
    pub clip_events: usize,
    pub wall_clock_ms: u128,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
    pub model_kind: String,
    pub config: Option<TrainConfig>,
}

impl TrainReport {
    /// Deterministic CSV, one row per epoch. Column order is fixed:
    /// epoch, recon_nll, kl_sticks, kl_bernoulli, kl_gaussian,
    /// cross_entropy, val_accuracy, active_mean, clip_events.
    /// Wall-clock per epoch is reported only in the text summary.
    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "epoch,recon_nll,kl_sticks,kl_bernoulli,kl_gaussian,cross_entropy,val_accuracy,active_mean,clip_events\n",
        );
        for e in &self.epochs {
            s.push_str(&format!(
                "{},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{}\n",
                e.epoch,
                e.recon_nll,
                e.kl_sticks,
                e.kl_bernoulli,
                e.kl_gaussian,
                e.cross_entropy,
                e.val_accuracy,
                e.active_mean,
                e.clip_events
            ));
        }
        s
    }

    pub fn summary_text(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("model: {}\n", self.model_kind));
        s.push_str(&format!(
            "best epoch: {} (validation accuracy {:.4})\n",
            self.best_epoch, self.best_val_accuracy
        ));
        if let Some(last) = self.epochs.last() {
            s.push_str(&format!(
                "final epoch {}: recon_nll {:.4}, kl_sticks {:.4}, kl_bernoulli {:.4}, kl_gaussian {:.4}, cross_entropy {:.4}\n",
                last.epoch, last.recon_nll, last.kl_sticks, last.kl_bernoulli, last.kl_gaussian, last.cross_entropy
            ));
        }
        let total_ms: u128 = self.epochs.iter().map(|e| e.wall_clock_ms).sum();
        s.push_str(&format!(
            "timing (non-deterministic): total {} ms over {} epochs\n",
            total_ms,
            self.epochs.len()
        ));
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalMetrics {
    pub accuracy: f64,
    pub mean_neg_elbo: Option<f64>,
    pub mean_active: Option<f64>,
    pub n: usize,
}

/// Frozen-model metrics on a split: hard-latent sampling with a fixed seed,
/// argmax classification accuracy, mean negative ELBO and mean active
/// feature count.
pub fn evaluate(model: &Model, examples: &[LabeledExample]) -> Result<EvalMetrics, TensorError> {
    evaluate_seeded(model, examples, EVAL_SEED)
}

pub fn evaluate_seeded(
    model: &Model,
    examples: &[LabeledExample],
    seed: u64,
) -> Result<EvalMetrics, TensorError> {
    assert!(!examples.is_empty(), "evaluate on an empty split");
    let n = examples.len();
    let k = model.cfg.k();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut correct = 0usize;
    let mut neg_elbo_sum = 0.0;
    let mut active_sum = 0.0;
    let chunk = 512;
    let idx: Vec<usize> = (0..n).collect();
    for ids in idx.chunks(chunk) {
        let batch = batch_from(examples, ids);
        let mut tape = Tape::new();
        let x = tape.constant(batch.x.clone());
        let enc = model.encode(&mut tape, x)?;
        if model.kind.is_generative() {
            let noise = NoiseBundle::sample(&mut rng, ids.len(), k);
            let (_, breakdown, latent) =
                model.elbo_parts(&mut tape, &batch, x, &enc, &noise, n, true)?;
            neg_elbo_sum += breakdown.recon_nll
                + breakdown.kl_sticks
                + breakdown.kl_bernoulli
                + breakdown.kl_gaussian;
            if let Some(z) = latent.z {
                active_sum += tape.value(z).data().iter().sum::<f64>();
            }
        }
        let pred = argmax_rows(tape.value(enc.task_logits));
        correct += pred
            .iter()
            .zip(&batch.labels)
            .filter(|(p, l)| p == l)
            .count();
    }
    Ok(EvalMetrics {
        accuracy: correct as f64 / n as f64,
        mean_neg_elbo: model.kind.is_generative().then_some(neg_elbo_sum / n as f64),
        mean_active: (model.kind == ModelKind::CibpVae).then_some(active_sum / n as f64),
        n,
    })
}

/// Train on shuffled minibatches: one global ν per step, per-example Z and A,
/// supervised loss, backprop, clip, Adam. Deterministic given the seed. On a
/// non-finite loss or gradient the model is rolled back to the best epoch
/// snapshot and the partial report is returned inside the error.
pub fn train(
    model: &mut Model,
    splits: &SplitSet,
    cfg: &TrainConfig,
) -> Result<TrainReport, TrainError> {
    cfg.validate()?;
    assert!(!splits.train.is_empty(), "empty training split");
    assert!(!splits.validation.is_empty(), "empty validation split");
    if let Some(z) = cfg.zeta {
        model.cfg.zeta = z;
    }
    let base_temperature = model.cfg.temperature;
    let n = splits.train.len();
    let k = model.cfg.k();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9E37_79B9_7F4A_7C15);
    let mut adam = AdamState::new(&model.params);
    let mut report = TrainReport {
        model_kind: model.kind.name().to_string(),
        config: Some(cfg.clone()),
        ..Default::default()
    };
    let mut best: Option<(f64, usize, crate::tensor::ParamStore)> = None;

    let mut indices: Vec<usize> = (0..n).collect();
    for epoch in 0..cfg.epochs {
        let t0 = std::time::Instant::now();
        if let TempSchedule::Anneal { start, end } = cfg.temperature {
            let frac = if cfg.epochs <= 1 {
                1.0
            } else {
                epoch as f64 / (cfg.epochs - 1) as f64
            };
            model.cfg.temperature = start + (end - start) * frac;
        } else {
            model.cfg.temperature = base_temperature;
        }
        indices.shuffle(&mut shuffle_rng);
        let mut sums = EpochRecord {
            epoch,
            recon_nll: 0.0,
            kl_sticks: 0.0,
            kl_bernoulli: 0.0,
            kl_gaussian: 0.0,
            cross_entropy: 0.0,
            val_accuracy: 0.0,
            active_mean: 0.0,
            clip_events: 0,
            wall_clock_ms: 0,
        };
        for (step, ids) in indices.chunks(cfg.batch_size).enumerate() {
            let batch = batch_from(&splits.train, ids);
            let noise = NoiseBundle::sample(&mut noise_rng, ids.len(), k);
            let mut tape = Tape::new();
            let step_result = (|| -> Result<_, TensorError> {
                let (loss, breakdown) =
                    model.supervised_loss(&mut tape, &batch, &noise, n, cfg.hard_latent)?;
                let loss_v = tape.value(loss).item();
                if !loss_v.is_finite() {
                    return Err(TensorError::NonFinite { op: "supervised_loss" });
                }
                model.params.zero_grads();
                tape.backward(loss, &mut model.params)?;
                Ok(breakdown)
            })();
            let breakdown = match step_result {
                Ok(b) => b,
                Err(e) => {
                    rollback(model, &best);
                    return Err(TrainError::NanAbort {
                        epoch,
                        step,
                        detail: e.to_string(),
                        report,
                    });
                }
            };
            let pre_norm = clip_global_norm(&mut model.params, cfg.clip_norm);
            if pre_norm > cfg.clip_norm {
                sums.clip_events += 1;
            }
            if let Err(e) = adam.step(
                &mut model.params,
                cfg.learning_rate,
                cfg.beta1,
                cfg.beta2,
                cfg.adam_eps,
            ) {
                rollback(model, &best);
                return Err(TrainError::NanAbort {
                    epoch,
                    step,
                    detail: e.to_string(),
                    report,
                });
            }
            sums.recon_nll += breakdown.elbo.recon_nll;
            sums.kl_sticks += breakdown.elbo.kl_sticks;
            sums.kl_bernoulli += breakdown.elbo.kl_bernoulli;
            sums.kl_gaussian += breakdown.elbo.kl_gaussian;
            sums.cross_entropy += breakdown.cross_entropy;
        }

        let val = evaluate(model, &splits.validation)?;
        sums.val_accuracy = val.accuracy;
        sums.active_mean = val.mean_active.unwrap_or(0.0);
        sums.wall_clock_ms = t0.elapsed().as_millis();
        report.epochs.push(sums);

        let is_better = match &best {
            None => true,
            Some((acc, _, _)) => val.accuracy > *acc,
        };
        if is_better {
            best = Some((val.accuracy, epoch, model.params.clone()));
        }
    }

    if let Some((acc, epoch, params)) = best {
        report.best_epoch = epoch;
        report.best_val_accuracy = acc;
        model.params = params;
    }
    model.cfg.temperature = base_temperature;
    Ok(report)
}

fn rollback(model: &mut Model, best: &Option<(f64, usize, crate::tensor::ParamStore)>) {
    if let Some((_, _, params)) = best {
        model.params = params.clone();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{split_by_subject, LabeledExample, SplitMode};
    use crate::ibp::IbpConfig;
    use crate::model::{Likelihood, ModelConfig};
    use rand::Rng;

    fn toy_cfg(input_dim: usize, classes: usize) -> ModelConfig {
        ModelConfig {
            input_dim,
            task_classes: classes,
            ibp: IbpConfig::new(2.0, 1.0, 4),
            enc_hidden: vec![8],
            task_hidden: vec![16],
            dec_hidden: vec![8],
            likelihood: Likelihood::GaussianFixedVar,
            zeta: 1.0,
            temperature: 0.5,
            log_var_floor: crate::model::DEFAULT_LOG_VAR_FLOOR,
        }
    }

    /// Linearly separable two-class toy set: class sign on a noisy direction.
    fn separable_examples(n: usize, seed: u64) -> Vec<LabeledExample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let label = i % 2;
                let sign = if label == 0 { -1.0 } else { 1.0 };
                let x: Vec<f64> = (0..4)
                    .map(|d| {
                        let noise: f64 = rng.random_range(-0.3..0.3);
                        if d == 0 {
                            sign * 1.0 + noise
                        } else {
                            noise
                        }
                    })
                    .collect();
                LabeledExample {
                    x,
                    task_label: label,
                    subject_id: i as u32,
                    artifact_flag: false,
                    color_id: None,
                }
            })
            .collect()
    }

    fn toy_splits(n: usize, seed: u64) -> SplitSet {
        split_by_subject(
            separable_examples(n, seed),
            [0.6, 0.2, 0.2],
            seed,
            SplitMode::ByExample,
        )
        .unwrap()
    }

    #[test]
    fn separable_toy_reaches_high_accuracy() {
        let splits = toy_splits(200, 1);
        let mut model = Model::classifier_baseline(toy_cfg(4, 2), 7).unwrap();
        let cfg = TrainConfig {
            epochs: 50,
            batch_size: 16,
            learning_rate: 3e-3,
            seed: 5,
            ..TrainConfig::default()
        };
        let report = train(&mut model, &splits, &cfg).unwrap();
        assert!(
            report.best_val_accuracy >= 0.99,
            "val accuracy {}",
            report.best_val_accuracy
        );
        let test = evaluate(&model, &splits.test).unwrap();
        assert!(test.accuracy >= 0.95, "test accuracy {}", test.accuracy);
    }

    #[test]
    fn training_is_bit_deterministic() {
        let splits = toy_splits(120, 2);
        let run = || {
            let mut model = Model::cibp_vae(toy_cfg(4, 2), 3).unwrap();
            let cfg = TrainConfig {
                epochs: 3,
                batch_size: 16,
                seed: 11,
                ..TrainConfig::default()
            };
            train(&mut model, &splits, &cfg).unwrap().to_csv()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn stick_kl_epoch_sum_matches_full_dataset_term() {
        // with a zero learning rate nothing moves, so the per-batch batch/N
        // shares must reassemble the full stick KL exactly
        let splits = toy_splits(100, 3);
        let mut model = Model::cibp_vae(toy_cfg(4, 2), 5).unwrap();
        let lr_frozen = TrainConfig {
            epochs: 1,
            batch_size: 7, // deliberately not dividing N evenly
            learning_rate: 1e-300,
            seed: 2,
            ..TrainConfig::default()
        };
        let report = train(&mut model, &splits, &lr_frozen).unwrap();

        // full-dataset stick KL from the (unchanged) sticks
        let mut tape = Tape::new();
        let sticks = model.sticks_posterior(&mut tape).unwrap().unwrap();
        let kl = crate::dist::kl_kumaraswamy_beta(
            &mut tape,
            sticks,
            crate::dist::BetaParams::new(model.cfg.ibp.alpha, model.cfg.ibp.beta),
            crate::dist::DEFAULT_KL_TERMS,
        )
        .unwrap();
        let full: f64 = tape.value(kl).data().iter().sum();
        assert!(
            (report.epochs[0].kl_sticks - full).abs() < 1e-9,
            "epoch sum {} vs full {}",
            report.epochs[0].kl_sticks,
            full
        );
    }

    #[test]
    fn evaluate_stub_models() {
        // inputs ARE one-hot labels scaled by 20; identity-ish task weights
        let classes = 4;
        let examples: Vec<LabeledExample> = (0..40)
            .map(|i| {
                let label = i % classes;
                let mut x = vec![0.0; classes];
                x[label] = 20.0;
                LabeledExample {
                    x,
                    task_label: label,
                    subject_id: i as u32,
                    artifact_flag: false,
                    color_id: None,
                }
            })
            .collect();
        let mut cfg = toy_cfg(classes, classes);
        cfg.task_hidden = vec![];
        let mut model = Model::classifier_baseline(cfg.clone(), 1).unwrap();
        // task/out maps input directly to logits: set to identity
        let id = model.params.id_by_name("task/out/w").unwrap();
        let p = model.params.get_mut(id);
        let d = p.value.shape()[0];
        let mut w = vec![0.0; d * classes];
        for i in 0..classes {
            w[i * classes + i] = 1.0;
        }
        p.value = crate::tensor::Tensor::from_vec(vec![d, classes], w).unwrap();
        let m = evaluate(&model, &examples).unwrap();
        assert_eq!(m.accuracy, 1.0);

        // uniform logits → argmax ties to class 0 → accuracy = 1/classes
        let model0 = Model::classifier_baseline(cfg, 1).map(|mut m| {
            let id = m.params.id_by_name("task/out/w").unwrap();
            let p = m.params.get_mut(id);
            p.value = crate::tensor::Tensor::zeros(p.value.shape());
            m
        })
        .unwrap();
        let m0 = evaluate(&model0, &examples).unwrap();
        assert!((m0.accuracy - 1.0 / classes as f64).abs() < 1e-12);

        // accuracy invariant under reordering
        let mut shuffled = examples.clone();
        shuffled.reverse();
        let m1 = evaluate(&model, &shuffled).unwrap();
        assert_eq!(m1.accuracy, m.accuracy);
    }

    #[test]
    fn nan_abort_rolls_back_and_reports() {
        let splits = toy_splits(60, 9);
        let mut model = Model::cibp_vae(toy_cfg(4, 2), 2).unwrap();
        // poison a decoder weight so the first forward pass blows up
        let id = model.params.id_by_name("dec/out/w").unwrap();
        model.params.get_mut(id).value.data_mut()[0] = f64::INFINITY;
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 16,
            seed: 4,
            ..TrainConfig::default()
        };
        let err = train(&mut model, &splits, &cfg).unwrap_err();
        match err {
            TrainError::NanAbort { epoch, report, .. } => {
                assert_eq!(epoch, 0);
                assert!(report.epochs.is_empty());
            }
            other => panic!("expected NanAbort, got {other}"),
        }
    }
}
