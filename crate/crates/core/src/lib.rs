//! Conditional IBP-VAE: a conditional variational autoencoder whose
//! confounder code carries a truncated Beta-Bernoulli (stick-breaking) prior,
//! plus the baselines, training loop, synthetic datasets and latent-unit
//! analyses used to study it.
//!
//! Layout:
//! - [`tensor`]: dense f64 tensors with reverse-mode autodiff
//! - [`dist`]: reparameterizable distributions and closed-form KLs
//! - [`ibp`]: truncated stick-breaking prior and its statistics
//! - [`model`]: the cIBP-VAE, c-VAE and classifier baselines
//! - [`training`]: Adam, the training loop, evaluation and checkpoints
//! - [`data`]: synthetic ECG, colored digits, IDX reader, subject splits
//! - [`analysis`]: probes, reconstruction breakdowns, triggering units,
//!   ablation and representation swapping

pub mod analysis;
pub mod data;
pub mod dist;
pub mod ibp;
pub mod model;
pub mod tensor;
pub mod training;
