//! Central-finite-difference gradient verification.

use super::params::ParamStore;
use super::tape::{Tape, TensorRef};
use super::{Result, TensorError};

/// Compare analytic gradients of a scalar-valued tape program against central
/// finite differences with step `h`, for every scalar in `store`.
///
/// `f` must be deterministic given the store (all noise enters as captured
/// constants); this is verified by running it twice and demanding bit-equal
/// outputs. Returns the worst relative error
/// `|analytic − numeric| / max(1, |numeric|)`.
pub fn gradient_check<F>(store: &mut ParamStore, h: f64, f: F) -> Result<f64>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<TensorRef>,
{
    assert!(h > 0.0, "finite-difference step must be positive");

    let eval = |store: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new();
        let out = f(&mut tape, store)?;
        let v = tape.value(out);
        if !v.shape().is_empty() {
            return Err(TensorError::NonScalarLoss {
                shape: v.shape().to_vec(),
            });
        }
        Ok(v.item())
    };

    let v1 = eval(store)?;
    let v2 = eval(store)?;
    if v1.to_bits() != v2.to_bits() {
        return Err(TensorError::NonDeterministic { v1, v2 });
    }

    // analytic gradients
    store.zero_grads();
    {
        let mut tape = Tape::new();
        let out = f(&mut tape, &*store)?;
        tape.backward(out, store)?;
    }
    let analytic: Vec<Vec<f64>> = store
        .ids()
        .map(|id| store.get(id).grad.data().to_vec())
        .collect();

    let mut worst = 0.0f64;
    let ids: Vec<_> = store.ids().collect();
    for (pi, id) in ids.iter().enumerate() {
        let n = store.get(*id).value.numel();
        for j in 0..n {
            let orig = store.get(*id).value.data()[j];
            store.get_mut(*id).value.data_mut()[j] = orig + h;
            let fp = eval(store)?;
            store.get_mut(*id).value.data_mut()[j] = orig - h;
            let fm = eval(store)?;
            store.get_mut(*id).value.data_mut()[j] = orig;
            let numeric = (fp - fm) / (2.0 * h);
            let rel = (analytic[pi][j] - numeric).abs() / numeric.abs().max(1.0);
            if rel > worst {
                worst = rel;
            }
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn linear_function_is_exact() {
        let mut store = ParamStore::new();
        let w = store
            .add("w", Tensor::from_vec(vec![3], vec![1.0, -2.0, 0.5]).unwrap())
            .unwrap();
        let err = gradient_check(&mut store, 1e-5, |tape, store| {
            let wr = tape.param(store, w);
            let c = tape.constant(Tensor::from_vec(vec![3], vec![2.0, 3.0, 4.0]).unwrap());
            let p = tape.mul(wr, c)?;
            tape.sum(p, None)
        })
        .unwrap();
        assert!(err < 1e-10, "linear gradient check error {err}");
    }

    #[test]
    fn constant_function_both_zero() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::scalar(1.5)).unwrap();
        let err = gradient_check(&mut store, 1e-5, |tape, _store| {
            let _ = w;
            Ok(tape.scalar(7.0))
        })
        .unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn detects_non_determinism() {
        use std::cell::Cell;
        let counter = Cell::new(0.0f64);
        let mut store = ParamStore::new();
        store.add("w", Tensor::scalar(1.0)).unwrap();
        let err = gradient_check(&mut store, 1e-5, |tape, _| {
            counter.set(counter.get() + 1.0);
            Ok(tape.scalar(counter.get()))
        })
        .unwrap_err();
        assert!(matches!(err, TensorError::NonDeterministic { .. }));
    }
}
