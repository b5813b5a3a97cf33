//! Generation-side analyses: reconstruction, latent-unit ablation and
//! representation swapping, plus the channel-dominance metric that turns
//! "the color was removed" into a number.

use crate::data::LabeledExample;
use crate::model::{argmax_rows, one_hot, Model, NoiseBundle};
use crate::tensor::{Tape, Tensor, TensorError};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Where the decoder's label input comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum YtSource {
    /// Argmax of the model's own task logits.
    Predicted,
    /// A supplied label.
    Label(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnitOp {
    SetOn,
    SetOff,
}

fn encode_latent(
    model: &Model,
    x: &[f64],
    seed: u64,
) -> Result<(Vec<f64>, Vec<f64>, usize), TensorError> {
    assert!(model.kind.is_generative());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = NoiseBundle::sample(&mut rng, 1, model.cfg.k());
    let mut tape = Tape::new();
    let xr = tape.constant(Tensor::from_vec(vec![1, model.cfg.input_dim], x.to_vec())?);
    let enc = model.encode(&mut tape, xr)?;
    let latent = model.sample_latent(&mut tape, &enc, &noise, true)?;
    let z = match latent.z {
        Some(z) => tape.value(z).data().to_vec(),
        // the c-VAE has no mask; treat every feature as pass-through
        None => vec![1.0; model.cfg.k()],
    };
    let a = tape.value(latent.a).data().to_vec();
    let pred = argmax_rows(tape.value(enc.task_logits))[0];
    Ok((z, a, pred))
}

fn decode_values(model: &Model, y_c: Vec<f64>, label: usize) -> Result<Vec<f64>, TensorError> {
    let mut tape = Tape::new();
    let yc = tape.constant(Tensor::from_vec(vec![1, model.cfg.k()], y_c)?);
    let yt = tape.constant(one_hot(&[label], model.cfg.task_classes));
    let out = model.decode(&mut tape, yc, yt)?;
    Ok(tape.value(out).data().to_vec())
}

/// Encode, hard-sample under the seed, overwrite the designated mask units,
/// and decode. Returns the decoder mean.
pub fn ablate_generate(
    model: &Model,
    x: &[f64],
    unit_ops: &[(usize, UnitOp)],
    y_t: YtSource,
    seed: u64,
) -> Result<Vec<f64>, TensorError> {
    let k = model.cfg.k();
    for (u, _) in unit_ops {
        if *u >= k {
            return Err(TensorError::InvalidAxis {
                axis: *u,
                shape: vec![k],
            });
        }
    }
    let (mut z, a, pred) = encode_latent(model, x, seed)?;
    for &(u, op) in unit_ops {
        z[u] = match op {
            UnitOp::SetOn => 1.0,
            UnitOp::SetOff => 0.0,
        };
    }
    let y_c: Vec<f64> = z.iter().zip(&a).map(|(zi, ai)| zi * ai).collect();
    let label = match y_t {
        YtSource::Predicted => pred,
        YtSource::Label(l) => l,
    };
    decode_values(model, y_c, label)
}

/// Regular reconstruction: identical to `ablate_generate` with no ops.
pub fn reconstruct(
    model: &Model,
    x: &[f64],
    y_t: YtSource,
    seed: u64,
) -> Result<Vec<f64>, TensorError> {
    ablate_generate(model, x, &[], y_t, seed)
}

/// Decode the confounder code of the style source under the task source's
/// (predicted) label.
pub fn swap_representations(
    model: &Model,
    x_style_source: &[f64],
    x_task_source: &[f64],
    seed: u64,
) -> Result<Vec<f64>, TensorError> {
    let (z, a, _) = encode_latent(model, x_style_source, seed)?;
    let y_c: Vec<f64> = z.iter().zip(&a).map(|(zi, ai)| zi * ai).collect();
    let (_, _, task_pred) = encode_latent(model, x_task_source, seed)?;
    decode_values(model, y_c, task_pred)
}

/// Max inter-channel mean absolute difference of a [R|G|B]-planar image.
/// Exactly zero for a gray image; large for a saturated tint.
pub fn channel_dominance(x: &[f64]) -> f64 {
    assert_eq!(x.len() % 3, 0, "expected three channel planes");
    let p = x.len() / 3;
    let (r, g, b) = (&x[..p], &x[p..2 * p], &x[2 * p..]);
    let mad = |u: &[f64], v: &[f64]| -> f64 {
        u.iter().zip(v).map(|(a, b)| (a - b).abs()).sum::<f64>() / p as f64
    };
    mad(r, g).max(mad(r, b)).max(mad(g, b))
}

/// Threshold below which a reconstruction counts as color-free: mean plus
/// two standard deviations of the channel-dominance metric over
/// reconstructions of the given white examples.
pub fn white_threshold(
    model: &Model,
    white_examples: &[&LabeledExample],
    seed: u64,
) -> Result<f64, TensorError> {
    assert!(!white_examples.is_empty());
    let mut vals = Vec::with_capacity(white_examples.len());
    for e in white_examples {
        let rec = reconstruct(model, &e.x, YtSource::Predicted, seed)?;
        vals.push(channel_dominance(&rec));
    }
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Ok(mean + 2.0 * var.sqrt())
}
