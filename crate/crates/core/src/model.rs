//! The conditional IBP-VAE and its baselines.
//!
//! The generative story: a binary mask Z (truncated Beta-Bernoulli prior,
//! one global stick sample ν per batch) gates continuous features A ~ N(0,I)
//! into a confounder code y_c = Z ⊙ A; the decoder reconstructs x from
//! (y_c, y_t) where y_t is the observed task label. A separate deterministic
//! task trunk predicts y_t and contributes a ζ-weighted cross-entropy to the
//! objective.
//!
//! Two baselines share the code paths: `c-vae` drops the IBP branch entirely
//! (y_c = A with a standard-normal prior) and `classifier` keeps only the
//! task trunk.

use crate::dist::{
    self, gaussian_sample, kl_bernoulli, kl_gaussian_standard, kl_kumaraswamy_beta,
    kumaraswamy_sample, relaxed_bernoulli_sample, BernoulliLogits, BetaParams, DiagGaussianParams,
    KumaraswamyParams, DEFAULT_KL_TERMS, PROB_EPS,
};
use crate::ibp::{self, IbpConfig};
use crate::tensor::{
    ParamId, ParamStore, Result, Tape, Tensor, TensorError, TensorRef, UnaryKind,
};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

pub const LN_2PI: f64 = 1.8378770664093453;

/// Initial bias of the data-dependent Bernoulli-evidence head.
pub const D_LOGITS_BIAS_INIT: f64 = -2.0;

/// Default floor on the posterior log-variance (σ ≥ 0.30). Restricting the
/// variational family keeps the continuous channel from becoming noiseless,
/// which is what pushes binary factors into the mask.
pub const DEFAULT_LOG_VAR_FLOOR: f64 = -2.4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    CibpVae,
    CVae,
    Classifier,
}

impl ModelKind {
    pub fn is_generative(self) -> bool {
        !matches!(self, ModelKind::Classifier)
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::CibpVae => "cibp-vae",
            ModelKind::CVae => "c-vae",
            ModelKind::Classifier => "classifier",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Likelihood {
    /// Unit-variance Gaussian means; NLL is squared error plus the constant.
    GaussianFixedVar,
    /// Sigmoid probabilities for inputs scaled to [0,1].
    Bernoulli,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub task_classes: usize,
    pub ibp: IbpConfig,
    pub enc_hidden: Vec<usize>,
    pub task_hidden: Vec<usize>,
    pub dec_hidden: Vec<usize>,
    pub likelihood: Likelihood,
    pub zeta: f64,
    pub temperature: f64,
    /// Lower bound on the posterior log-variance of A (variational-family
    /// restriction; raise it to push binary factors into the mask).
    #[serde(default = "default_log_var_floor")]
    pub log_var_floor: f64,
}

fn default_log_var_floor() -> f64 {
    DEFAULT_LOG_VAR_FLOOR
}

impl ModelConfig {
    /// Truncation level; the continuous code has one feature per stick.
    pub fn k(&self) -> usize {
        self.ibp.k
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.task_classes == 0 || self.ibp.k == 0 {
            return Err(TensorError::Domain {
                op: "model_config",
                detail: "dimensions must be positive".into(),
            });
        }
        if self.zeta < 0.0 {
            return Err(TensorError::Domain {
                op: "model_config",
                detail: format!("zeta must be non-negative, got {}", self.zeta),
            });
        }
        if self.temperature <= 0.0 {
            return Err(TensorError::Domain {
                op: "model_config",
                detail: format!("temperature must be positive, got {}", self.temperature),
            });
        }
        Ok(())
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_dim: 1320,
            task_classes: 10,
            ibp: IbpConfig::default(),
            enc_hidden: vec![256, 256],
            task_hidden: vec![256, 256],
            dec_hidden: vec![256, 256],
            likelihood: Likelihood::GaussianFixedVar,
            zeta: 10.0,
            temperature: 0.5,
            log_var_floor: DEFAULT_LOG_VAR_FLOOR,
        }
    }
}

type Layer = (ParamId, ParamId);

#[derive(Debug, Clone)]
struct Layers {
    enc: Vec<Layer>,
    d_head: Option<Layer>,
    mu_head: Option<Layer>,
    lv_head: Option<Layer>,
    task: Vec<Layer>,
    task_out: Layer,
    dec: Vec<Layer>,
    dec_out: Option<Layer>,
    sticks: Option<(ParamId, ParamId)>,
}

/// A model: kind, configuration and named parameters. Exclusively owned
/// while training; frozen models are safe to evaluate concurrently.
#[derive(Debug, Clone)]
pub struct Model {
    pub kind: ModelKind,
    pub cfg: ModelConfig,
    pub params: ParamStore,
    layers: Layers,
}

/// Confounder-branch encoder outputs; `d_logits` only exists for the
/// IBP-gated model.
#[derive(Clone, Copy)]
pub struct ConfounderOutputs {
    pub d_logits: Option<TensorRef>,
    pub mu: TensorRef,
    pub log_var: TensorRef,
}

#[derive(Clone, Copy)]
pub struct EncoderOutputs {
    pub confounder: Option<ConfounderOutputs>,
    /// Last hidden activations of the task trunk (probe representation).
    pub task_penultimate: TensorRef,
    pub task_logits: TensorRef,
}

/// One latent draw for a batch. `nu`/`pi` are single [K] vectors shared by
/// every row (the global sample), `z`/`a` are per-example.
#[derive(Clone, Copy)]
pub struct LatentSample {
    pub nu: Option<TensorRef>,
    pub pi: Option<TensorRef>,
    pub z: Option<TensorRef>,
    pub a: TensorRef,
    pub y_c: TensorRef,
}

/// Noise for one latent draw; all randomness enters the model through this.
pub struct NoiseBundle {
    pub u_nu: Tensor,
    pub u_z: Tensor,
    pub eps: Tensor,
}

impl NoiseBundle {
    pub fn sample<R: Rng>(rng: &mut R, n: usize, k: usize) -> Self {
        Self {
            u_nu: dist::uniform_noise(rng, &[k]),
            u_z: dist::uniform_noise(rng, &[n, k]),
            eps: dist::normal_noise(rng, &[n, k]),
        }
    }
}

/// A minibatch: inputs plus integer task labels.
#[derive(Debug, Clone)]
pub struct Batch {
    pub x: Tensor,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Additive loss breakdown in dataset units: per-example terms are summed
/// over the batch, and `kl_sticks` is the batch's share (batch/N) of the
/// single global stick-KL term.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ElboBreakdown {
    pub recon_nll: f64,
    pub kl_sticks: f64,
    pub kl_bernoulli: f64,
    pub kl_gaussian: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossBreakdown {
    pub elbo: ElboBreakdown,
    pub cross_entropy: f64,
}

impl Model {
    /// Build a model with deterministic initialization. Parameters are
    /// created in a fixed canonical order; the init RNG stream is part of
    /// the model identity.
    pub fn new(kind: ModelKind, cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let k = cfg.k();

        let add_linear = |params: &mut ParamStore,
                              rng: &mut ChaCha8Rng,
                              name: &str,
                              fan_in: usize,
                              fan_out: usize|
         -> Result<Layer> {
            let scale = 1.0 / (fan_in as f64).sqrt();
            let data: Vec<f64> = (0..fan_in * fan_out)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(rng);
                    z * scale
                })
                .collect();
            let w = params.add(&format!("{name}/w"), Tensor::from_vec(vec![fan_in, fan_out], data)?)?;
            let b = params.add(&format!("{name}/b"), Tensor::zeros(&[fan_out]))?;
            Ok((w, b))
        };

        let generative = kind.is_generative();
        let mut enc = Vec::new();
        let (mut d_head, mut mu_head, mut lv_head) = (None, None, None);
        if generative {
            let mut width = cfg.input_dim;
            for (i, &h) in cfg.enc_hidden.iter().enumerate() {
                enc.push(add_linear(&mut params, &mut rng, &format!("enc/{i}"), width, h)?);
                width = h;
            }
            if kind == ModelKind::CibpVae {
                let d = add_linear(&mut params, &mut rng, "enc/d", width, k)?;
                // units default off without per-example evidence, so
                // conditional factors gravitate to data-dependent gating
                params.get_mut(d.1).value = Tensor::full(&[k], D_LOGITS_BIAS_INIT);
                d_head = Some(d);
            }
            mu_head = Some(add_linear(&mut params, &mut rng, "enc/mu", width, k)?);
            lv_head = Some(add_linear(&mut params, &mut rng, "enc/lv", width, k)?);
        }

        let mut task = Vec::new();
        let mut width = cfg.input_dim;
        for (i, &h) in cfg.task_hidden.iter().enumerate() {
            task.push(add_linear(&mut params, &mut rng, &format!("task/{i}"), width, h)?);
            width = h;
        }
        let task_out = add_linear(&mut params, &mut rng, "task/out", width, cfg.task_classes)?;

        let mut dec = Vec::new();
        let mut dec_out = None;
        if generative {
            let mut width = k + cfg.task_classes;
            for (i, &h) in cfg.dec_hidden.iter().enumerate() {
                dec.push(add_linear(&mut params, &mut rng, &format!("dec/{i}"), width, h)?);
                width = h;
            }
            dec_out = Some(add_linear(&mut params, &mut rng, "dec/out", width, cfg.input_dim)?);
        }

        let sticks = if kind == ModelKind::CibpVae {
            let a0 = dist::inverse_softplus(cfg.ibp.alpha);
            let b0 = dist::inverse_softplus(cfg.ibp.beta);
            let a = params.add("sticks/a_raw", Tensor::full(&[k], a0))?;
            let b = params.add("sticks/b_raw", Tensor::full(&[k], b0))?;
            Some((a, b))
        } else {
            None
        };

        Ok(Self {
            kind,
            cfg,
            params,
            layers: Layers {
                enc,
                d_head,
                mu_head,
                lv_head,
                task,
                task_out,
                dec,
                dec_out,
                sticks,
            },
        })
    }

    pub fn cibp_vae(cfg: ModelConfig, seed: u64) -> Result<Self> {
        Self::new(ModelKind::CibpVae, cfg, seed)
    }

    /// Identical architecture with the IBP branch removed: y_c = A with a
    /// standard-normal prior; no sticks, no binary mask.
    pub fn cvae_baseline(cfg: ModelConfig, seed: u64) -> Result<Self> {
        Self::new(ModelKind::CVae, cfg, seed)
    }

    /// Task trunk only, trained with cross-entropy alone.
    pub fn classifier_baseline(cfg: ModelConfig, seed: u64) -> Result<Self> {
        Self::new(ModelKind::Classifier, cfg, seed)
    }

    /// Rebuild a model around externally provided parameter values
    /// (checkpoint loading). Values are matched by name and must agree in
    /// shape with a freshly built skeleton.
    pub fn from_parts(kind: ModelKind, cfg: ModelConfig, values: Vec<(String, Tensor)>) -> Result<Self> {
        let mut model = Self::new(kind, cfg, 0)?;
        if values.len() != model.params.len() {
            return Err(TensorError::Domain {
                op: "model_from_parts",
                detail: format!(
                    "expected {} parameters, got {}",
                    model.params.len(),
                    values.len()
                ),
            });
        }
        for (name, value) in values {
            let id = model.params.id_by_name(&name).ok_or_else(|| TensorError::Domain {
                op: "model_from_parts",
                detail: format!("unknown parameter {name:?}"),
            })?;
            let p = model.params.get_mut(id);
            if p.value.shape() != value.shape() {
                return Err(TensorError::Domain {
                    op: "model_from_parts",
                    detail: format!(
                        "parameter {name:?} shape {:?} does not match checkpoint {:?}",
                        p.value.shape(),
                        value.shape()
                    ),
                });
            }
            p.value = value;
        }
        Ok(model)
    }

    fn mlp(
        &self,
        tape: &mut Tape,
        mut h: TensorRef,
        layers: &[Layer],
        act: UnaryKind,
    ) -> Result<TensorRef> {
        for (w, b) in layers {
            let wr = tape.param(&self.params, *w);
            let br = tape.param(&self.params, *b);
            h = tape.affine(h, wr, br)?;
            h = tape.unary(act, h)?;
        }
        Ok(h)
    }

    fn head(&self, tape: &mut Tape, h: TensorRef, layer: Layer) -> Result<TensorRef> {
        let wr = tape.param(&self.params, layer.0);
        let br = tape.param(&self.params, layer.1);
        tape.affine(h, wr, br)
    }

    /// Run both encoder trunks. The confounder trunk (tanh) emits d(x), μ(x)
    /// and log σ²(x); the task trunk (relu) emits pre-softmax logits.
    pub fn encode(&self, tape: &mut Tape, x: TensorRef) -> Result<EncoderOutputs> {
        let shape = tape.shape(x);
        if shape.len() != 2 || shape[1] != self.cfg.input_dim {
            return Err(TensorError::ShapeMismatch {
                op: "encode",
                lhs: shape.to_vec(),
                rhs: vec![0, self.cfg.input_dim],
            });
        }
        let confounder = if self.kind.is_generative() {
            let h = self.mlp(tape, x, &self.layers.enc, UnaryKind::Tanh)?;
            let d_logits = match self.layers.d_head {
                Some(l) => Some(self.head(tape, h, l)?),
                None => None,
            };
            let mu = self.head(tape, h, self.layers.mu_head.expect("generative"))?;
            let lv_raw = self.head(tape, h, self.layers.lv_head.expect("generative"))?;
            let log_var = tape.clamp(lv_raw, self.cfg.log_var_floor, 30.0)?;
            Some(ConfounderOutputs { d_logits, mu, log_var })
        } else {
            None
        };
        let t = self.mlp(tape, x, &self.layers.task, UnaryKind::Relu)?;
        let task_logits = self.head(tape, t, self.layers.task_out)?;
        Ok(EncoderOutputs {
            confounder,
            task_penultimate: t,
            task_logits,
        })
    }

    /// Softplus-constrained global stick posterior parameters (a, b), [K].
    pub fn sticks_posterior(&self, tape: &mut Tape) -> Result<Option<KumaraswamyParams>> {
        match self.layers.sticks {
            None => Ok(None),
            Some((a_raw, b_raw)) => {
                let ar = tape.param(&self.params, a_raw);
                let br = tape.param(&self.params, b_raw);
                let a = tape.softplus(ar)?;
                let b = tape.softplus(br)?;
                Ok(Some(KumaraswamyParams { a, b }))
            }
        }
    }

    /// One latent draw following the structured scheme: a single global
    /// ν ~ q(ν) for the whole batch, then per-example Z ~ q(z|ν, x) and
    /// A ~ q(A|x); y_c = Z ⊙ A.
    pub fn sample_latent(
        &self,
        tape: &mut Tape,
        enc: &EncoderOutputs,
        noise: &NoiseBundle,
        hard: bool,
    ) -> Result<LatentSample> {
        assert!(
            self.kind.is_generative(),
            "classifier baseline has no latent path"
        );
        let conf = enc.confounder.expect("generative model");
        let g = DiagGaussianParams {
            mu: conf.mu,
            log_var: conf.log_var,
        };
        let a = gaussian_sample(tape, g, &noise.eps)?;
        match self.kind {
            ModelKind::CVae => Ok(LatentSample {
                nu: None,
                pi: None,
                z: None,
                a,
                y_c: a,
            }),
            ModelKind::CibpVae => {
                let sticks = self.sticks_posterior(tape)?.expect("cibp has sticks");
                let nu = kumaraswamy_sample(tape, sticks, &noise.u_nu)?;
                let pi = ibp::sticks_to_pi(tape, nu)?;
                let z_logits = posterior_z_logits(tape, pi, conf.d_logits.expect("cibp"))?;
                let z = relaxed_bernoulli_sample(
                    tape,
                    BernoulliLogits::new(z_logits, self.cfg.temperature),
                    &noise.u_z,
                    hard,
                )?;
                let y_c = tape.mul(z, a)?;
                Ok(LatentSample {
                    nu: Some(nu),
                    pi: Some(pi),
                    z: Some(z),
                    a,
                    y_c,
                })
            }
            ModelKind::Classifier => unreachable!(),
        }
    }

    /// Decode reconstruction parameters from (y_c, y_t). During training
    /// `y_t` is the ground-truth one-hot; analyses may substitute predicted
    /// labels or swapped codes.
    pub fn decode(&self, tape: &mut Tape, y_c: TensorRef, y_t: TensorRef) -> Result<TensorRef> {
        assert!(self.kind.is_generative(), "classifier baseline cannot decode");
        let joint = tape.concat(&[y_c, y_t], 1)?;
        let h = self.mlp(tape, joint, &self.layers.dec, UnaryKind::Tanh)?;
        let out = self.head(tape, h, self.layers.dec_out.expect("generative"))?;
        match self.cfg.likelihood {
            Likelihood::GaussianFixedVar => Ok(out),
            Likelihood::Bernoulli => tape.sigmoid(out),
        }
    }

    /// Per-example reconstruction negative log-likelihood, shape [n].
    fn recon_nll(&self, tape: &mut Tape, recon: TensorRef, x: TensorRef) -> Result<TensorRef> {
        match self.cfg.likelihood {
            Likelihood::GaussianFixedVar => {
                let diff = tape.sub(recon, x)?;
                let sq = tape.mul(diff, diff)?;
                let s = tape.sum(sq, Some(1))?;
                let d = self.cfg.input_dim as f64;
                let s = tape.shift(s, d * LN_2PI)?;
                tape.scale(s, 0.5)
            }
            Likelihood::Bernoulli => {
                let p = tape.clamp(recon, PROB_EPS, 1.0 - PROB_EPS)?;
                let one = tape.scalar(1.0);
                let log_p = tape.log(p)?;
                let q = tape.sub(one, p)?;
                let log_q = tape.log(q)?;
                let xc = tape.sub(one, x)?;
                let t1 = tape.mul(x, log_p)?;
                let t2 = tape.mul(xc, log_q)?;
                let ll = tape.add(t1, t2)?;
                let s = tape.sum(ll, Some(1))?;
                tape.neg(s)
            }
        }
    }

    /// Negative ELBO for one batch, with the stick KL counted once over the
    /// dataset and scaled by batch/N. Returns the scalar loss (a per-example
    /// mean plus the 1/N global share) and the term breakdown in dataset
    /// units.
    pub fn elbo(
        &self,
        tape: &mut Tape,
        batch: &Batch,
        noise: &NoiseBundle,
        dataset_size: usize,
        hard: bool,
    ) -> Result<(TensorRef, ElboBreakdown)> {
        assert!(self.kind.is_generative(), "classifier baseline has no ELBO");
        let x = tape.constant(batch.x.clone());
        let enc = self.encode(tape, x)?;
        let (loss, breakdown, _) =
            self.elbo_parts(tape, batch, x, &enc, noise, dataset_size, hard)?;
        Ok((loss, breakdown))
    }

    /// ELBO pieces from an existing encoding; also hands back the latent
    /// sample so callers can inspect the mask without re-encoding.
    pub(crate) fn elbo_parts(
        &self,
        tape: &mut Tape,
        batch: &Batch,
        x: TensorRef,
        enc: &EncoderOutputs,
        noise: &NoiseBundle,
        dataset_size: usize,
        hard: bool,
    ) -> Result<(TensorRef, ElboBreakdown, LatentSample)> {
        assert!(dataset_size >= batch.len());
        let n = batch.len();
        let latent = self.sample_latent(tape, enc, noise, hard)?;
        let y_t = tape.constant(one_hot(&batch.labels, self.cfg.task_classes));
        let recon = self.decode(tape, latent.y_c, y_t)?;
        let nll = self.recon_nll(tape, recon, x)?;
        let nll_mean = tape.mean(nll, None)?;

        let conf = enc.confounder.expect("generative");
        let g = DiagGaussianParams {
            mu: conf.mu,
            log_var: conf.log_var,
        };
        let kl_g = kl_gaussian_standard(tape, g)?;
        let kl_g_mean = tape.mean(kl_g, None)?;

        let mut loss = tape.add(nll_mean, kl_g_mean)?;
        let mut breakdown = ElboBreakdown {
            recon_nll: tape.value(nll_mean).item() * n as f64,
            kl_gaussian: tape.value(kl_g_mean).item() * n as f64,
            ..Default::default()
        };

        if self.kind == ModelKind::CibpVae {
            let sticks = self.sticks_posterior(tape)?.expect("cibp");
            let prior = BetaParams::new(self.cfg.ibp.alpha, self.cfg.ibp.beta);
            let kl_s = kl_kumaraswamy_beta(tape, sticks, prior, DEFAULT_KL_TERMS)?;
            let kl_s_sum = tape.sum(kl_s, None)?;
            let kl_s_scaled = tape.scale(kl_s_sum, 1.0 / dataset_size as f64)?;

            let pi = latent.pi.expect("cibp");
            let z_logits = posterior_z_logits(tape, pi, conf.d_logits.expect("cibp"))?;
            let q_prob = tape.sigmoid(z_logits)?;
            let kl_b = kl_bernoulli(tape, q_prob, pi)?;
            let kl_b_rows = tape.sum(kl_b, Some(1))?;
            let kl_b_mean = tape.mean(kl_b_rows, None)?;

            loss = tape.add(loss, kl_s_scaled)?;
            loss = tape.add(loss, kl_b_mean)?;
            breakdown.kl_sticks = tape.value(kl_s_sum).item() * n as f64 / dataset_size as f64;
            breakdown.kl_bernoulli = tape.value(kl_b_mean).item() * n as f64;
        }
        Ok((loss, breakdown, latent))
    }

    /// Mean softmax cross-entropy of the task logits against the labels.
    pub fn cross_entropy(
        &self,
        tape: &mut Tape,
        task_logits: TensorRef,
        labels: &[usize],
    ) -> Result<TensorRef> {
        let n = labels.len();
        let lse = tape.logsumexp_keepdim(task_logits, 1)?;
        let lse = tape.reshape(lse, &[n])?;
        let onehot = tape.constant(one_hot(labels, self.cfg.task_classes));
        let picked = tape.mul(task_logits, onehot)?;
        let true_logit = tape.sum(picked, Some(1))?;
        let ce = tape.sub(lse, true_logit)?;
        tape.mean(ce, None)
    }

    /// The full training objective: negative ELBO plus ζ times the mean task
    /// cross-entropy. The classifier baseline is pure cross-entropy.
    pub fn supervised_loss(
        &self,
        tape: &mut Tape,
        batch: &Batch,
        noise: &NoiseBundle,
        dataset_size: usize,
        hard: bool,
    ) -> Result<(TensorRef, LossBreakdown)> {
        let x = tape.constant(batch.x.clone());
        let enc = self.encode(tape, x)?;
        let ce = self.cross_entropy(tape, enc.task_logits, &batch.labels)?;
        if self.kind == ModelKind::Classifier {
            let breakdown = LossBreakdown {
                elbo: ElboBreakdown::default(),
                cross_entropy: tape.value(ce).item() * batch.len() as f64,
            };
            return Ok((ce, breakdown));
        }
        let (elbo_loss, elbo_terms, _) =
            self.elbo_parts(tape, batch, x, &enc, noise, dataset_size, hard)?;
        let ce_scaled = tape.scale(ce, self.cfg.zeta)?;
        let total = tape.add(elbo_loss, ce_scaled)?;
        Ok((
            total,
            LossBreakdown {
                elbo: elbo_terms,
                cross_entropy: tape.value(ce).item() * batch.len() as f64,
            },
        ))
    }
}

/// Fuse global stick evidence with per-example evidence in logit space:
/// logit(q) = logit(π_k) + d(x)_{nk}. Neutral data evidence (d = 0) leaves
/// q = π; a neutral prior (π = ½) leaves q = sigmoid(d).
pub fn posterior_z_logits(tape: &mut Tape, pi: TensorRef, d_logits: TensorRef) -> Result<TensorRef> {
    let pi_c = tape.clamp(pi, PROB_EPS, 1.0 - PROB_EPS)?;
    let one = tape.scalar(1.0);
    let log_pi = tape.log(pi_c)?;
    let comp = tape.sub(one, pi_c)?;
    let log_comp = tape.log(comp)?;
    let logit_pi = tape.sub(log_pi, log_comp)?;
    tape.add(d_logits, logit_pi)
}

/// One-hot encode labels into an [n × classes] tensor.
pub fn one_hot(labels: &[usize], classes: usize) -> Tensor {
    let mut data = vec![0.0; labels.len() * classes];
    for (i, &l) in labels.iter().enumerate() {
        assert!(l < classes, "label {l} out of range for {classes} classes");
        data[i * classes + l] = 1.0;
    }
    Tensor::from_vec(vec![labels.len(), classes], data).expect("consistent shape")
}

/// Row-wise argmax (ties resolve to the lowest index).
pub fn argmax_rows(t: &Tensor) -> Vec<usize> {
    assert_eq!(t.shape().len(), 2);
    let cols = t.shape()[1];
    (0..t.shape()[0])
        .map(|r| {
            let row = t.row(r);
            let mut best = 0usize;
            for c in 1..cols {
                if row[c] > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}
