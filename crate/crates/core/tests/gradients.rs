//! Finite-difference oracle suite: every differentiable op, composed
//! networks, and the full supervised objective with frozen noise.

use ibpd_core::dist;
use ibpd_core::ibp::IbpConfig;
use ibpd_core::model::{Batch, Likelihood, Model, ModelConfig, ModelKind, NoiseBundle};
use ibpd_core::tensor::{gradient_check, ParamStore, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const OP_TOL: f64 = 1e-4;
const MODEL_TOL: f64 = 1e-3;
const H: f64 = 1e-5;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::from_vec(shape.to_vec(), data).unwrap()
}

#[test]
fn matmul_gradients_match_finite_differences() {
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let a = store.add("a", rand_tensor(&mut rng, &[3, 4], -1.0, 1.0)).unwrap();
        let b = store.add("b", rand_tensor(&mut rng, &[4, 2], -1.0, 1.0)).unwrap();
        let w = rand_tensor(&mut rng, &[3, 2], -1.0, 1.0);
        let err = gradient_check(&mut store, H, |tape, store| {
            let ar = tape.param(store, a);
            let br = tape.param(store, b);
            let m = tape.matmul(ar, br)?;
            let wr = tape.constant(w.clone());
            let p = tape.mul(m, wr)?;
            tape.sum(p, None)
        })
        .unwrap();
        assert!(err < OP_TOL, "seed {seed}: matmul gradcheck {err}");
    }
}

#[test]
fn broadcast_mul_gradients_match_finite_differences() {
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let mut store = ParamStore::new();
        let a = store.add("a", rand_tensor(&mut rng, &[2, 3], -1.5, 1.5)).unwrap();
        let b = store.add("b", rand_tensor(&mut rng, &[3], -1.5, 1.5)).unwrap();
        let err = gradient_check(&mut store, H, |tape, store| {
            let ar = tape.param(store, a);
            let br = tape.param(store, b);
            let m = tape.mul(ar, br)?;
            let s = tape.sigmoid(m)?;
            tape.sum(s, None)
        })
        .unwrap();
        assert!(err < OP_TOL, "seed {seed}: broadcast mul gradcheck {err}");
    }
}

#[test]
fn broadcast_backward_equals_explicit_tiling() {
    // the gradient of a [3]-shaped operand broadcast against [4,3] must equal
    // the gradient computed by explicitly tiling it to [4,3] and summing rows
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
        let a = rand_tensor(&mut rng, &[4, 3], -2.0, 2.0);
        let bvec = rand_tensor(&mut rng, &[3], 0.5, 2.0);

        let mut store = ParamStore::new();
        let b = store.add("b", bvec.clone()).unwrap();
        let mut tape = Tape::new();
        let ar = tape.constant(a.clone());
        let br = tape.param(&store, b);
        let m = tape.div(ar, br).unwrap();
        let loss = tape.sum(m, None).unwrap();
        tape.backward(loss, &mut store).unwrap();
        let broadcast_grad = store.get(b).grad.data().to_vec();

        let mut tiled = vec![0.0; 12];
        for r in 0..4 {
            tiled[r * 3..(r + 1) * 3].copy_from_slice(bvec.data());
        }
        let mut store2 = ParamStore::new();
        let bt = store2
            .add("bt", Tensor::from_vec(vec![4, 3], tiled).unwrap())
            .unwrap();
        let mut tape2 = Tape::new();
        let ar = tape2.constant(a);
        let br = tape2.param(&store2, bt);
        let m = tape2.div(ar, br).unwrap();
        let loss = tape2.sum(m, None).unwrap();
        tape2.backward(loss, &mut store2).unwrap();
        let tiled_grad = store2.get(bt).grad.data();
        for c in 0..3 {
            let col_sum: f64 = (0..4).map(|r| tiled_grad[r * 3 + c]).sum();
            assert!(
                (broadcast_grad[c] - col_sum).abs() < 1e-10,
                "seed {seed} col {c}: {} vs {col_sum}",
                broadcast_grad[c]
            );
        }
    }
}

#[test]
fn tanh_gradient_on_100_random_points() {
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
        let mut store = ParamStore::new();
        let x = store.add("x", rand_tensor(&mut rng, &[100], -3.0, 3.0)).unwrap();
        let err = gradient_check(&mut store, H, |tape, store| {
            let xr = tape.param(store, x);
            let t = tape.tanh(xr)?;
            tape.sum(t, None)
        })
        .unwrap();
        assert!(err < OP_TOL, "seed {seed}: tanh gradcheck {err}");
    }
}

#[test]
fn every_unary_op_passes_gradcheck() {
    // positive-domain ops draw from (0.2, 3); the rest from (-2, 2)
    type BuildFn = fn(&mut Tape, ibpd_core::tensor::TensorRef) -> ibpd_core::tensor::Result<ibpd_core::tensor::TensorRef>;
    let cases: Vec<(&str, bool, BuildFn)> = vec![
        ("sigmoid", false, |t, x| t.sigmoid(x)),
        ("tanh", false, |t, x| t.tanh(x)),
        ("relu", false, |t, x| t.relu(x)),
        ("softplus", false, |t, x| t.softplus(x)),
        ("exp", false, |t, x| t.exp(x)),
        ("neg", false, |t, x| t.neg(x)),
        ("log", true, |t, x| t.log(x)),
        ("ln_gamma", true, |t, x| t.ln_gamma(x)),
        ("digamma", true, |t, x| t.digamma(x)),
    ];
    for (name, positive, f) in cases {
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(400 + seed);
            let (lo, hi) = if positive { (0.2, 3.0) } else { (-2.0, 2.0) };
            let mut store = ParamStore::new();
            let x = store.add("x", rand_tensor(&mut rng, &[17], lo, hi)).unwrap();
            let err = gradient_check(&mut store, H, |tape, store| {
                let xr = tape.param(store, x);
                let y = f(tape, xr)?;
                let sq = tape.mul(y, y)?;
                tape.sum(sq, None)
            })
            .unwrap();
            assert!(err < OP_TOL, "{name} seed {seed}: gradcheck {err}");
        }
    }
}

#[test]
fn binary_reduce_and_structural_ops_pass_gradcheck() {
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + seed);
        let mut store = ParamStore::new();
        let a = store.add("a", rand_tensor(&mut rng, &[3, 4], 0.3, 2.0)).unwrap();
        let b = store.add("b", rand_tensor(&mut rng, &[3, 4], 0.3, 2.0)).unwrap();
        let c = store.add("c", rand_tensor(&mut rng, &[3, 2], -1.0, 1.0)).unwrap();
        let err = gradient_check(&mut store, H, |tape, store| {
            let ar = tape.param(store, a);
            let br = tape.param(store, b);
            let cr = tape.param(store, c);
            let sum = tape.add(ar, br)?;
            let diff = tape.sub(ar, br)?;
            let quot = tape.div(ar, br)?;
            let pw = tape.pow(ar, br)?;
            let cat = tape.concat(&[sum, diff, quot, pw, cr], 1)?;
            let m0 = tape.mean(cat, Some(0))?;
            let mx = tape.max(cat, Some(1))?;
            let cs = tape.cumsum(m0, 0)?;
            let s1 = tape.sum(cs, None)?;
            let s2 = tape.sum(mx, None)?;
            let lse = tape.logsumexp_keepdim(cat, 1)?;
            let s3 = tape.sum(lse, None)?;
            let t = tape.add(s1, s2)?;
            tape.add(t, s3)
        })
        .unwrap();
        assert!(err < OP_TOL, "seed {seed}: composite op gradcheck {err}");
    }
}

#[test]
fn two_layer_mlp_gradients_match_finite_differences() {
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(600 + seed);
        let mut store = ParamStore::new();
        let w1 = store.add("w1", rand_tensor(&mut rng, &[5, 7], -0.7, 0.7)).unwrap();
        let b1 = store.add("b1", rand_tensor(&mut rng, &[7], -0.3, 0.3)).unwrap();
        let w2 = store.add("w2", rand_tensor(&mut rng, &[7, 2], -0.7, 0.7)).unwrap();
        let b2 = store.add("b2", rand_tensor(&mut rng, &[2], -0.3, 0.3)).unwrap();
        let x = rand_tensor(&mut rng, &[4, 5], -1.0, 1.0);
        let err = gradient_check(&mut store, H, |tape, store| {
            let xr = tape.constant(x.clone());
            let w1r = tape.param(store, w1);
            let b1r = tape.param(store, b1);
            let h = tape.affine(xr, w1r, b1r)?;
            let h = tape.tanh(h)?;
            let w2r = tape.param(store, w2);
            let b2r = tape.param(store, b2);
            let out = tape.affine(h, w2r, b2r)?;
            let sq = tape.mul(out, out)?;
            tape.sum(sq, None)
        })
        .unwrap();
        assert!(err < OP_TOL, "seed {seed}: MLP gradcheck {err}");
    }
}

fn tiny_model_cfg() -> ModelConfig {
    ModelConfig {
        input_dim: 6,
        task_classes: 3,
        ibp: IbpConfig::new(2.0, 1.0, 3),
        enc_hidden: vec![6],
        task_hidden: vec![6],
        dec_hidden: vec![6],
        likelihood: Likelihood::GaussianFixedVar,
        zeta: 5.0,
        temperature: 0.5,
        log_var_floor: ibpd_core::model::DEFAULT_LOG_VAR_FLOOR,
    }
}

fn full_model_gradcheck(kind: ModelKind, seed: u64) -> f64 {
    let cfg = tiny_model_cfg();
    let model = Model::new(kind, cfg.clone(), seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xF00D);
    let n = 3;
    let x = dist::normal_noise(&mut rng, &[n, cfg.input_dim]);
    let labels: Vec<usize> = (0..n).map(|i| i % cfg.task_classes).collect();
    let batch = Batch { x, labels };
    let noise = NoiseBundle::sample(&mut rng, n, cfg.k());

    // move the parameters into a scratch store wired to a throwaway model so
    // gradient_check can perturb them
    let mut probe_model = model.clone();
    let mut store = std::mem::take(&mut probe_model.params);
    let err = gradient_check(&mut store, H, |tape, store| {
        let mut m = probe_model.clone();
        m.params = store.clone();
        let (loss, _) = m.supervised_loss(tape, &batch, &noise, 10, false)?;
        Ok(loss)
    })
    .unwrap();
    err
}

#[test]
fn full_cibp_vae_loss_gradients_under_frozen_noise() {
    for seed in 0..10 {
        let err = full_model_gradcheck(ModelKind::CibpVae, seed);
        assert!(err < MODEL_TOL, "seed {seed}: cIBP-VAE gradcheck {err}");
    }
}

#[test]
fn cvae_and_classifier_loss_gradients_under_frozen_noise() {
    for seed in 0..10 {
        let err = full_model_gradcheck(ModelKind::CVae, seed);
        assert!(err < MODEL_TOL, "seed {seed}: c-VAE gradcheck {err}");
        let err = full_model_gradcheck(ModelKind::Classifier, seed);
        assert!(err < MODEL_TOL, "seed {seed}: classifier gradcheck {err}");
    }
}

#[test]
fn encoder_and_decoder_sub_networks_pass_gradcheck() {
    let cfg = tiny_model_cfg();
    let model = Model::cibp_vae(cfg.clone(), 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = dist::normal_noise(&mut rng, &[2, cfg.input_dim]);

    // encoder: sum of all four outputs
    let mut probe_model = model.clone();
    let mut store = std::mem::take(&mut probe_model.params);
    let enc_model = probe_model.clone();
    let xc = x.clone();
    let err = gradient_check(&mut store, H, move |tape, store| {
        let mut m = enc_model.clone();
        m.params = store.clone();
        let xr = tape.constant(xc.clone());
        let enc = m.encode(tape, xr)?;
        let conf = enc.confounder.unwrap();
        let s1 = tape.sum(conf.d_logits.unwrap(), None)?;
        let s2 = tape.sum(conf.mu, None)?;
        let s3 = tape.sum(conf.log_var, None)?;
        let s4 = tape.sum(enc.task_logits, None)?;
        let t1 = tape.add(s1, s2)?;
        let t2 = tape.add(s3, s4)?;
        tape.add(t1, t2)
    })
    .unwrap();
    assert!(err < OP_TOL, "encoder gradcheck {err}");

    // decoder alone
    let mut probe_model = model.clone();
    let mut store = std::mem::take(&mut probe_model.params);
    let y_c = dist::normal_noise(&mut rng, &[2, cfg.k()]);
    let y_t = ibpd_core::model::one_hot(&[0, 2], cfg.task_classes);
    let err = gradient_check(&mut store, H, move |tape, store| {
        let mut m = probe_model.clone();
        m.params = store.clone();
        let ycr = tape.constant(y_c.clone());
        let ytr = tape.constant(y_t.clone());
        let out = m.decode(tape, ycr, ytr)?;
        let sq = tape.mul(out, out)?;
        tape.sum(sq, None)
    })
    .unwrap();
    assert!(err < MODEL_TOL, "decoder gradcheck {err}");
}
