//! Reparameterizable distributions and closed-form KL divergences.
//!
//! Everything here is a pure function of tape values plus explicitly passed
//! noise tensors; no hidden random state. The variational stick posterior is
//! a Kumaraswamy — the inverse CDF is closed-form so samples are pathwise
//! differentiable, and the KL to the Beta prior has a closed form with a
//! truncated series correction. Binary units use the binary-concrete
//! (relaxed Bernoulli) construction, with straight-through hard samples.

use crate::tensor::{
    ln_beta, ParamStore, Result, Tape, Tensor, TensorError, TensorRef,
    EULER_MASCHERONI,
};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Probabilities and uniform noise are clamped this far away from {0, 1}
/// before any log.
pub const PROB_EPS: f64 = 1e-7;

/// Default number of series terms in the Kumaraswamy→Beta KL correction.
/// With the canonical β = 1 prior the series vanishes exactly; away from
/// β = 1 more terms may be needed (see `kl_kumaraswamy_beta`).
pub const DEFAULT_KL_TERMS: usize = 10;

/// Variational stick parameters; both strictly positive (callers obtain them
/// as softplus of unconstrained parameters).
#[derive(Clone, Copy)]
pub struct KumaraswamyParams {
    pub a: TensorRef,
    pub b: TensorRef,
}

/// Beta prior parameters (fixed, not learned).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaParams {
    pub alpha: f64,
    pub beta: f64,
}

impl BetaParams {
    pub fn new(alpha: f64, beta: f64) -> Self {
        assert!(
            alpha > 0.0 && beta > 0.0,
            "Beta parameters must be strictly positive, got ({alpha}, {beta})"
        );
        Self { alpha, beta }
    }
}

/// Diagonal Gaussian in natural (μ, log σ²) parameterization.
#[derive(Clone, Copy)]
pub struct DiagGaussianParams {
    pub mu: TensorRef,
    pub log_var: TensorRef,
}

/// Bernoulli in logit space with a relaxation temperature.
#[derive(Clone, Copy)]
pub struct BernoulliLogits {
    pub logits: TensorRef,
    pub temperature: f64,
}

impl BernoulliLogits {
    pub fn new(logits: TensorRef, temperature: f64) -> Self {
        assert!(temperature > 0.0, "temperature must be positive");
        Self { logits, temperature }
    }
}

// ── Noise generation ────────────────────────────────────────────────────

/// Uniform(0,1) noise tensor.
pub fn uniform_noise<R: Rng>(rng: &mut R, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    Tensor::from_vec(shape.to_vec(), data).expect("shape/data agree by construction")
}

/// Standard normal noise tensor.
pub fn normal_noise<R: Rng>(rng: &mut R, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    Tensor::from_vec(shape.to_vec(), data).expect("shape/data agree by construction")
}

/// Clamp a noise/probability tensor into `[PROB_EPS, 1 − PROB_EPS]`.
pub fn clamp_unit(t: &Tensor) -> Tensor {
    let data: Vec<f64> = t
        .data()
        .iter()
        .map(|&v| v.clamp(PROB_EPS, 1.0 - PROB_EPS))
        .collect();
    Tensor::from_vec(t.shape().to_vec(), data).expect("same shape")
}

// ── Samplers ────────────────────────────────────────────────────────────

/// Inverse-CDF Kumaraswamy sample: ν = (1 − (1−u)^{1/b})^{1/a}.
///
/// `u` is uniform noise (clamped here); the result is differentiable in the
/// `a`, `b` parameters and clamped strictly inside (0, 1).
pub fn kumaraswamy_sample(
    tape: &mut Tape,
    params: KumaraswamyParams,
    u: &Tensor,
) -> Result<TensorRef> {
    let u = clamp_unit(u);
    let one_minus_u: Vec<f64> = u.data().iter().map(|&v| 1.0 - v).collect();
    let base = tape.constant(Tensor::from_vec(u.shape().to_vec(), one_minus_u)?);
    let one = tape.scalar(1.0);
    let inv_b = tape.div(one, params.b)?;
    let t = tape.pow(base, inv_b)?;
    let s = tape.sub(one, t)?;
    // keep strictly positive before the fractional power
    let s = tape.clamp(s, PROB_EPS * PROB_EPS, 1.0)?;
    let inv_a = tape.div(one, params.a)?;
    let nu = tape.pow(s, inv_a)?;
    tape.clamp(nu, PROB_EPS, 1.0 - PROB_EPS)
}

/// Binary-concrete sample. Soft mode returns
/// `sigmoid((logits + log u − log(1−u)) / τ)`; hard mode thresholds the soft
/// sample at 0.5 and routes gradients straight through the soft value.
pub fn relaxed_bernoulli_sample(
    tape: &mut Tape,
    b: BernoulliLogits,
    u: &Tensor,
    hard: bool,
) -> Result<TensorRef> {
    let u = clamp_unit(u);
    let logistic: Vec<f64> = u.data().iter().map(|&v| (v / (1.0 - v)).ln()).collect();
    let noise = tape.constant(Tensor::from_vec(u.shape().to_vec(), logistic)?);
    let shifted = tape.add(b.logits, noise)?;
    let scaled = tape.scale(shifted, 1.0 / b.temperature)?;
    let soft = tape.sigmoid(scaled)?;
    if hard {
        tape.hard_step(soft)
    } else {
        Ok(soft)
    }
}

/// Reparameterized diagonal Gaussian sample: A = μ + exp(log_var/2) ⊙ ε.
pub fn gaussian_sample(tape: &mut Tape, g: DiagGaussianParams, eps: &Tensor) -> Result<TensorRef> {
    if tape.shape(g.mu) != eps.shape() {
        return Err(TensorError::ShapeMismatch {
            op: "gaussian_sample",
            lhs: tape.shape(g.mu).to_vec(),
            rhs: eps.shape().to_vec(),
        });
    }
    let half_lv = tape.scale(g.log_var, 0.5)?;
    let sigma = tape.exp(half_lv)?;
    let e = tape.constant(eps.clone());
    let se = tape.mul(sigma, e)?;
    tape.add(g.mu, se)
}

// ── KL divergences ──────────────────────────────────────────────────────

/// Closed-form KL(Kumaraswamy(a,b) ‖ Beta(α,β)) per stick, differentiable in
/// (a, b):
///
/// ```text
/// (a−α)/a · (−γ − ψ(b) − 1/b) + log(ab) + log B(α,β) − (b−1)/b
///   + (β−1)·b·Σ_{m=1}^{terms} B(m/a, b) / (m + ab)
/// ```
///
/// The series handles the E[log(1−ν)] term and vanishes identically at β = 1;
/// for β ≠ 1 truncation error decays like terms^{−b}, so small `b` with
/// β ≠ 1 needs more terms than the default.
pub fn kl_kumaraswamy_beta(
    tape: &mut Tape,
    q: KumaraswamyParams,
    p: BetaParams,
    terms: usize,
) -> Result<TensorRef> {
    assert!(terms >= 1, "series must keep at least one term");
    let (a, b) = (q.a, q.b);
    let one = tape.scalar(1.0);

    // (a−α)/a · (−γ − ψ(b) − 1/b)
    let a_minus_alpha = tape.shift(a, -p.alpha)?;
    let frac = tape.div(a_minus_alpha, a)?;
    let psi_b = tape.digamma(b)?;
    let inv_b = tape.div(one, b)?;
    let inner = tape.add(psi_b, inv_b)?;
    let inner = tape.shift(inner, EULER_MASCHERONI)?;
    let inner = tape.neg(inner)?;
    let term1 = tape.mul(frac, inner)?;

    // log(ab) + log B(α,β)
    let ab = tape.mul(a, b)?;
    let log_ab = tape.log(ab)?;
    let log_beta_fn = ln_beta(p.alpha, p.beta);
    let term2 = tape.shift(log_ab, log_beta_fn)?;

    // −(b−1)/b = 1/b − 1
    let term3 = tape.shift(inv_b, -1.0)?;

    let mut kl = tape.add(term1, term2)?;
    kl = tape.add(kl, term3)?;

    if p.beta != 1.0 {
        // (β−1)·b·Σ_m B(m/a, b)/(m + ab)
        let lg_b = tape.ln_gamma(b)?;
        let mut series: Option<TensorRef> = None;
        for m in 1..=terms {
            let mf = m as f64;
            let mc = tape.scalar(mf);
            let m_over_a = tape.div(mc, a)?;
            let lg_ma = tape.ln_gamma(m_over_a)?;
            let arg = tape.add(m_over_a, b)?;
            let lg_sum = tape.ln_gamma(arg)?;
            let log_beta_m = {
                let s = tape.add(lg_ma, lg_b)?;
                tape.sub(s, lg_sum)?
            };
            let beta_m = tape.exp(log_beta_m)?;
            let denom = tape.shift(ab, mf)?;
            let term = tape.div(beta_m, denom)?;
            series = Some(match series {
                None => term,
                Some(s) => tape.add(s, term)?,
            });
        }
        let series = series.expect("terms >= 1");
        let series_b = tape.mul(series, b)?;
        let correction = tape.scale(series_b, p.beta - 1.0)?;
        kl = tape.add(kl, correction)?;
    }
    Ok(kl)
}

/// Elementwise KL(Bernoulli(q) ‖ Bernoulli(p)) with both probabilities
/// clamped into [PROB_EPS, 1 − PROB_EPS].
pub fn kl_bernoulli(tape: &mut Tape, q_prob: TensorRef, p_prob: TensorRef) -> Result<TensorRef> {
    let q = tape.clamp(q_prob, PROB_EPS, 1.0 - PROB_EPS)?;
    let p = tape.clamp(p_prob, PROB_EPS, 1.0 - PROB_EPS)?;
    let one = tape.scalar(1.0);
    let log_q = tape.log(q)?;
    let log_p = tape.log(p)?;
    let one_minus_q = tape.sub(one, q)?;
    let one_minus_p = tape.sub(one, p)?;
    let log_1q = tape.log(one_minus_q)?;
    let log_1p = tape.log(one_minus_p)?;
    let d1 = tape.sub(log_q, log_p)?;
    let t1 = tape.mul(q, d1)?;
    let d2 = tape.sub(log_1q, log_1p)?;
    let t2 = tape.mul(one_minus_q, d2)?;
    tape.add(t1, t2)
}

/// Per-row KL(N(μ, σ²) ‖ N(0, I)): 0.5 Σ_k (μ² + σ² − log σ² − 1), summed
/// over the trailing axis.
pub fn kl_gaussian_standard(tape: &mut Tape, g: DiagGaussianParams) -> Result<TensorRef> {
    let mu2 = tape.mul(g.mu, g.mu)?;
    let var = tape.exp(g.log_var)?;
    let s = tape.add(mu2, var)?;
    let s = tape.sub(s, g.log_var)?;
    let s = tape.shift(s, -1.0)?;
    let half = tape.scale(s, 0.5)?;
    let last_axis = tape.shape(half).len() - 1;
    tape.sum(half, Some(last_axis))
}

/// Plain sigmoid for non-tape code paths (analysis, evaluation).
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Softplus⁻¹: the raw value whose softplus equals `y` (> 0).
pub fn inverse_softplus(y: f64) -> f64 {
    assert!(y > 0.0);
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

/// Evaluate the Kumaraswamy→Beta KL on plain values, discarding gradients.
pub fn eval_kl_kumaraswamy_beta(a: &[f64], b: &[f64], p: BetaParams, terms: usize) -> Vec<f64> {
    let mut store = ParamStore::new();
    let ia = store
        .add("a", Tensor::from_vec(vec![a.len()], a.to_vec()).unwrap())
        .unwrap();
    let ib = store
        .add("b", Tensor::from_vec(vec![b.len()], b.to_vec()).unwrap())
        .unwrap();
    let mut tape = Tape::new();
    let ra = tape.param(&store, ia);
    let rb = tape.param(&store, ib);
    let kl = kl_kumaraswamy_beta(&mut tape, KumaraswamyParams { a: ra, b: rb }, p, terms)
        .expect("closed-form KL on positive parameters");
    tape.value(kl).data().to_vec()
}
