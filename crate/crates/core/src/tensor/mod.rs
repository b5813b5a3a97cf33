//! Dense f64 tensors with reverse-mode automatic differentiation.
//!
//! The engine is deliberately small: row-major `Vec<f64>` storage, a
//! per-forward-pass tape ([`Tape`]) recording one node per op, and exact
//! analytic backward rules. Everything the encoders, decoder and losses need
//! is expressible with the op set here; there is no convolution, no GPU and
//! no graph optimization.

mod gradcheck;
mod params;
mod special;
mod tape;

pub use gradcheck::gradient_check;
pub use params::{ParamId, ParamStore, Parameter};
pub use special::{digamma, ln_beta, ln_gamma, trigamma, EULER_MASCHERONI};
pub use tape::{BinaryKind, ReduceKind, Tape, TensorRef, UnaryKind};

use thiserror::Error;

/// Errors raised by tensor construction, forward ops and backward passes.
#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("invalid axis {axis} for shape {shape:?}")]
    InvalidAxis { axis: usize, shape: Vec<usize> },
    #[error("non-finite values produced by {op}")]
    NonFinite { op: &'static str },
    #[error("domain error in {op}: {detail}")]
    Domain { op: &'static str, detail: String },
    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("function is not deterministic under gradient check: {v1} vs {v2}")]
    NonDeterministic { v1: f64, v2: f64 },
    #[error("shape {shape:?} implies {expected} elements, got {got}")]
    DataLength {
        shape: Vec<usize>,
        expected: usize,
        got: usize,
    },
    #[error("duplicate parameter name {0:?}")]
    DuplicateParam(String),
}

pub type Result<T> = std::result::Result<T, TensorError>;

/// Dense row-major f64 value. Shape `[]` is a scalar holding one element.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn from_vec(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(TensorError::DataLength {
                shape,
                expected,
                got: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n: usize = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n: usize = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![],
            data: vec![value],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Value of a scalar (shape `[]` or single-element) tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1, "item() on non-scalar tensor");
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Row `i` of a rank-2 tensor.
    pub fn row(&self, i: usize) -> &[f64] {
        debug_assert_eq!(self.shape.len(), 2);
        let w = self.shape[1];
        &self.data[i * w..(i + 1) * w]
    }
}

/// Broadcast two shapes under trailing-dimension rules.
pub(crate) fn broadcast_shape(
    op: &'static str,
    a: &[usize],
    b: &[usize],
) -> Result<Vec<usize>> {
    let nd = a.len().max(b.len());
    let mut out = vec![0usize; nd];
    for i in 0..nd {
        let da = if i < nd - a.len() { 1 } else { a[i - (nd - a.len())] };
        let db = if i < nd - b.len() { 1 } else { b[i - (nd - b.len())] };
        if da != db && da != 1 && db != 1 {
            return Err(TensorError::ShapeMismatch {
                op,
                lhs: a.to_vec(),
                rhs: b.to_vec(),
            });
        }
        out[i] = da.max(db);
    }
    Ok(out)
}

/// Element strides of `shape` padded to `nd` dims, with stride 0 on axes that
/// broadcast (size 1 against a larger output axis).
pub(crate) fn broadcast_strides(shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let nd = out_shape.len();
    let offset = nd - shape.len();
    let mut strides = vec![0usize; nd];
    let mut acc = 1usize;
    for d in (0..shape.len()).rev() {
        strides[offset + d] = if shape[d] == 1 && out_shape[offset + d] != 1 {
            0
        } else {
            acc
        };
        acc *= shape[d];
    }
    strides
}

/// Sum `grad` (laid out as `grad_shape`) down to `target_shape`, reducing over
/// broadcast axes. Used by broadcast-aware backward rules.
pub(crate) fn reduce_grad_to_shape(
    grad: &[f64],
    grad_shape: &[usize],
    target_shape: &[usize],
) -> Vec<f64> {
    if grad_shape == target_shape {
        return grad.to_vec();
    }
    let target_numel: usize = target_shape.iter().product();
    let mut out = vec![0.0; target_numel];
    let strides = broadcast_strides(target_shape, grad_shape);
    let nd = grad_shape.len();
    let mut coords = vec![0usize; nd];
    for (flat, g) in grad.iter().enumerate() {
        let mut rem = flat;
        for d in (0..nd).rev() {
            coords[d] = rem % grad_shape[d];
            rem /= grad_shape[d];
        }
        let mut t = 0usize;
        for d in 0..nd {
            t += coords[d] * strides[d];
        }
        out[t] += *g;
    }
    out
}
