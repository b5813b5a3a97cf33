//! Truncated stick-breaking construction of the Beta-Bernoulli process.
//!
//! The stick weights are ν_k ~ Beta(α, β) with cumulative activation
//! probabilities π_k = Π_{i≤k} ν_i, truncated at K sticks. β = 1 recovers
//! the canonical one-parameter process where each example activates
//! Σ_k (α/(α+1))^k features in expectation.

use crate::tensor::{Result, Tape, TensorError, TensorRef};
use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

/// Prior configuration: concentration α, second Beta shape β and truncation K.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IbpConfig {
    pub alpha: f64,
    #[serde(default = "default_beta")]
    pub beta: f64,
    pub k: usize,
}

fn default_beta() -> f64 {
    1.0
}

impl IbpConfig {
    pub fn new(alpha: f64, beta: f64, k: usize) -> Self {
        assert!(alpha > 0.0 && beta > 0.0, "α, β must be positive");
        assert!(k >= 1, "truncation level must be at least 1");
        Self { alpha, beta, k }
    }
}

impl Default for IbpConfig {
    fn default() -> Self {
        Self {
            alpha: 10.0,
            beta: 1.0,
            k: 50,
        }
    }
}

/// A sampled stick state: weights ν and cumulative probabilities π.
#[derive(Debug, Clone)]
pub struct StickState {
    pub nu: Vec<f64>,
    pub pi: Vec<f64>,
}

/// Differentiable cumulative product π_k = Π_{i≤k} ν_i, computed in log
/// space (exp of the cumulative sum of logs) for stability.
pub fn sticks_to_pi(tape: &mut Tape, nu: TensorRef) -> Result<TensorRef> {
    let v = tape.value(nu);
    if let Some(bad) = v.data().iter().find(|&&x| !(x > 0.0 && x < 1.0)) {
        return Err(TensorError::Domain {
            op: "sticks_to_pi",
            detail: format!("stick weight {bad} outside (0, 1)"),
        });
    }
    let axis = v.shape().len() - 1;
    let log_nu = tape.log(nu)?;
    let cum = tape.cumsum(log_nu, axis)?;
    tape.exp(cum)
}

/// Non-tape cumulative product on plain values (same log-space scheme).
pub fn sticks_to_pi_values(nu: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    nu.iter()
        .map(|&v| {
            acc += v.ln();
            acc.exp()
        })
        .collect()
}

/// Draw (ν, π) and a binary feature matrix Z ~ Bernoulli(π) row-wise from the
/// truncated prior. Prior simulation only; not differentiable. Each ν_k is a
/// Beta(α, β) draw formed as the ratio of two Gamma variates.
pub fn sample_prior<R: Rng>(cfg: &IbpConfig, n: usize, rng: &mut R) -> (StickState, Vec<Vec<u8>>) {
    assert!(n >= 1);
    let ga = Gamma::new(cfg.alpha, 1.0).expect("alpha > 0");
    let gb = Gamma::new(cfg.beta, 1.0).expect("beta > 0");
    let nu: Vec<f64> = (0..cfg.k)
        .map(|_| {
            let x: f64 = ga.sample(rng);
            let y: f64 = gb.sample(rng);
            // guard against a zero denominator from underflow
            (x / (x + y)).clamp(f64::MIN_POSITIVE, 1.0 - 1e-15)
        })
        .collect();
    let pi = sticks_to_pi_values(&nu);
    let z: Vec<Vec<u8>> = (0..n)
        .map(|_| {
            pi.iter()
                .map(|&p| u8::from(rng.random::<f64>() < p))
                .collect()
        })
        .collect();
    (StickState { nu, pi }, z)
}

/// Expected number of active features per example under the truncated prior.
/// For β = 1 this is the closed form Σ_{k=1..K} (α/(α+1))^k; otherwise a
/// Monte-Carlo estimate over 10^5 draws of ν.
pub fn expected_active(cfg: &IbpConfig) -> f64 {
    if cfg.beta == 1.0 {
        let r = cfg.alpha / (cfg.alpha + 1.0);
        let mut sum = 0.0;
        let mut term = 1.0;
        for _ in 0..cfg.k {
            term *= r;
            sum += term;
        }
        sum
    } else {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x1b9);
        let draws = 100_000;
        let ga = Gamma::new(cfg.alpha, 1.0).expect("alpha > 0");
        let gb = Gamma::new(cfg.beta, 1.0).expect("beta > 0");
        let mut total = 0.0;
        for _ in 0..draws {
            let mut prod = 1.0;
            for _ in 0..cfg.k {
                let x: f64 = ga.sample(&mut rng);
                let y: f64 = gb.sample(&mut rng);
                prod *= x / (x + y);
                total += prod;
            }
        }
        total / draws as f64
    }
}
