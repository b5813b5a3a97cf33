//! Post-training analyses over frozen models: representation extraction,
//! disentanglement probes, reconstruction breakdowns, active-feature
//! statistics, triggering-unit discovery, ablation and representation
//! swapping. All analyses are read-only and seeded, so reports are
//! reproducible byte for byte.

mod generate;
mod probe;

pub use generate::{
    ablate_generate, channel_dominance, reconstruct, swap_representations, white_threshold,
    UnitOp, YtSource,
};
pub use probe::{probe_accuracy, train_probe, ProbeConfig, ProbeModel};

use crate::data::{batch_from, LabeledExample};
use crate::model::{Model, ModelKind, NoiseBundle};
use crate::tensor::{Tape, Tensor, TensorError};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Frozen-model representations for a set of examples: task-trunk
/// penultimate activations, the gated confounder code, and the hard mask.
pub struct Representations {
    pub y_t: Tensor,
    pub y_c: Tensor,
    /// Hard binary mask; absent for the c-VAE baseline.
    pub z: Option<Tensor>,
}

/// Extract (y_t, y_c, Z) with hard latent sampling under a fixed seed.
pub fn extract_representations(
    model: &Model,
    examples: &[LabeledExample],
    seed: u64,
) -> Result<Representations, TensorError> {
    assert!(model.kind.is_generative(), "classifier has no confounder code");
    let n = examples.len();
    let k = model.cfg.k();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut y_t_rows: Vec<f64> = Vec::new();
    let mut y_c_rows: Vec<f64> = Vec::new();
    let mut z_rows: Vec<f64> = Vec::new();
    let idx: Vec<usize> = (0..n).collect();
    let mut t_width = 0;
    for ids in idx.chunks(512) {
        let batch = batch_from(examples, ids);
        let noise = NoiseBundle::sample(&mut rng, ids.len(), k);
        let mut tape = Tape::new();
        let x = tape.constant(batch.x.clone());
        let enc = model.encode(&mut tape, x)?;
        let latent = model.sample_latent(&mut tape, &enc, &noise, true)?;
        let t = tape.value(enc.task_penultimate);
        t_width = t.shape()[1];
        y_t_rows.extend_from_slice(t.data());
        y_c_rows.extend_from_slice(tape.value(latent.y_c).data());
        if let Some(z) = latent.z {
            z_rows.extend_from_slice(tape.value(z).data());
        }
    }
    Ok(Representations {
        y_t: Tensor::from_vec(vec![n, t_width], y_t_rows)?,
        y_c: Tensor::from_vec(vec![n, k], y_c_rows)?,
        z: if model.kind == ModelKind::CibpVae {
            Some(Tensor::from_vec(vec![n, k], z_rows)?)
        } else {
            None
        },
    })
}

// ── Probe report ────────────────────────────────────────────────────────

/// Which confounder label the probe predicts alongside the task label.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConfounderTarget {
    SubjectId,
    ColorId,
}

impl ConfounderTarget {
    pub fn name(self) -> &'static str {
        match self {
            ConfounderTarget::SubjectId => "subject_id",
            ConfounderTarget::ColorId => "color_id",
        }
    }
}

/// 2×2 accuracy matrix: representations {y_t, y_c} × targets
/// {task, confounder}, plus per-target chance levels.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeReport {
    pub confounder_target: &'static str,
    /// `[representation][target]`: rows y_t, y_c; columns task, confounder.
    pub accuracy: [[f64; 2]; 2],
    pub chance: [f64; 2],
    pub n_probe_train: usize,
    pub n_probe_eval: usize,
}

impl ProbeReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("representation,task,");
        s.push_str(self.confounder_target);
        s.push('\n');
        s.push_str(&format!(
            "y_t,{:.6},{:.6}\n",
            self.accuracy[0][0], self.accuracy[0][1]
        ));
        s.push_str(&format!(
            "y_c,{:.6},{:.6}\n",
            self.accuracy[1][0], self.accuracy[1][1]
        ));
        s.push_str(&format!("random,{:.6},{:.6}\n", self.chance[0], self.chance[1]));
        s
    }
}

/// Train one probe per (representation, target) cell on a stratified half of
/// the examples and report accuracy on the held-back half.
pub fn probe_report(
    model: &Model,
    examples: &[LabeledExample],
    confounder: ConfounderTarget,
    probe_cfg: &ProbeConfig,
    seed: u64,
) -> Result<ProbeReport, TensorError> {
    let reps = extract_representations(model, examples, seed)?;
    let task: Vec<usize> = examples.iter().map(|e| e.task_label).collect();
    let conf: Vec<usize> = match confounder {
        ConfounderTarget::SubjectId => {
            let mut subjects: Vec<u32> = examples.iter().map(|e| e.subject_id).collect();
            subjects.sort_unstable();
            subjects.dedup();
            examples
                .iter()
                .map(|e| subjects.binary_search(&e.subject_id).expect("present"))
                .collect()
        }
        ConfounderTarget::ColorId => examples
            .iter()
            .map(|e| usize::from(e.color_id.unwrap_or(0)))
            .collect(),
    };
    let task_classes = distinct(&task)?;
    let conf_classes = distinct(&conf)?;

    let mut accuracy = [[0.0; 2]; 2];
    let mut ns = (0usize, 0usize);
    for (ri, rep) in [&reps.y_t, &reps.y_c].into_iter().enumerate() {
        for (ti, (target, classes)) in
            [(&task, task_classes), (&conf, conf_classes)].into_iter().enumerate()
        {
            let (tr, ev) = stratified_halves(target, seed ^ 0xAB1E);
            ns = (tr.len(), ev.len());
            let probe = train_probe(
                &select_rows(rep, &tr),
                &select(target, &tr),
                classes,
                probe_cfg,
            )?;
            accuracy[ri][ti] =
                probe_accuracy(&probe, &select_rows(rep, &ev), &select(target, &ev));
        }
    }
    Ok(ProbeReport {
        confounder_target: confounder.name(),
        accuracy,
        chance: [1.0 / task_classes as f64, 1.0 / conf_classes as f64],
        n_probe_train: ns.0,
        n_probe_eval: ns.1,
    })
}

fn distinct(targets: &[usize]) -> Result<usize, TensorError> {
    let mut t = targets.to_vec();
    t.sort_unstable();
    t.dedup();
    if t.len() < 2 {
        return Err(TensorError::Domain {
            op: "probe",
            detail: "degenerate single-class target".into(),
        });
    }
    Ok(*t.last().expect("non-empty") + 1)
}

/// Deterministic stratified 50/50 split: within each class, shuffled members
/// alternate between the two halves.
pub fn stratified_halves(targets: &[usize], seed: u64) -> (Vec<usize>, Vec<usize>) {
    use rand::seq::SliceRandom;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..targets.len()).collect();
    order.shuffle(&mut rng);
    let classes = targets.iter().copied().max().unwrap_or(0) + 1;
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for &i in &order {
        by_class[targets[i]].push(i);
    }
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for members in by_class {
        for (j, i) in members.into_iter().enumerate() {
            if j % 2 == 0 {
                a.push(i);
            } else {
                b.push(i);
            }
        }
    }
    (a, b)
}

fn select_rows(t: &Tensor, idx: &[usize]) -> Tensor {
    let w = t.shape()[1];
    let mut data = Vec::with_capacity(idx.len() * w);
    for &i in idx {
        data.extend_from_slice(t.row(i));
    }
    Tensor::from_vec(vec![idx.len(), w], data).expect("consistent width")
}

fn select(v: &[usize], idx: &[usize]) -> Vec<usize> {
    idx.iter().map(|&i| v[i]).collect()
}

// ── Reconstruction breakdown ────────────────────────────────────────────

/// Mean squared reconstruction error over (example, position) pairs: the
/// whole signal, and the artifact region split by stimulus group. Empty
/// groups report as absent.
#[derive(Debug, Clone, PartialEq)]
pub struct ReconBreakdown {
    pub whole_signal: f64,
    pub artifact_all: Option<f64>,
    pub artifact_non_stimulus: Option<f64>,
    pub artifact_stimulus: Option<f64>,
}

impl ReconBreakdown {
    pub fn to_csv(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or("absent".to_string(), |x| format!("{x:.9}"));
        format!(
            "region,mse\nwhole_signal,{:.9}\nartifact_all,{}\nartifact_non_stimulus,{}\nartifact_stimulus,{}\n",
            self.whole_signal,
            fmt(self.artifact_all),
            fmt(self.artifact_non_stimulus),
            fmt(self.artifact_stimulus),
        )
    }
}

/// Reconstruct every example (hard latent, fixed seed, ground-truth labels)
/// and aggregate squared errors over the given artifact index set.
pub fn recon_breakdown(
    model: &Model,
    examples: &[LabeledExample],
    artifact_region: &[usize],
    seed: u64,
) -> Result<ReconBreakdown, TensorError> {
    assert!(model.kind.is_generative());
    let n = examples.len();
    let k = model.cfg.k();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut whole = Kahan::default();
    let mut region_groups = [Kahan::default(), Kahan::default()]; // [non-stimulus, stimulus]
    let mut group_counts = [0usize, 0usize];
    let idx: Vec<usize> = (0..n).collect();
    for ids in idx.chunks(512) {
        let batch = batch_from(examples, ids);
        let noise = NoiseBundle::sample(&mut rng, ids.len(), k);
        let mut tape = Tape::new();
        let x = tape.constant(batch.x.clone());
        let enc = model.encode(&mut tape, x)?;
        let latent = model.sample_latent(&mut tape, &enc, &noise, true)?;
        let y_t = tape.constant(crate::model::one_hot(&batch.labels, model.cfg.task_classes));
        let recon = model.decode(&mut tape, latent.y_c, y_t)?;
        let rv = tape.value(recon);
        for (row, &ex_id) in ids.iter().enumerate() {
            let e = &examples[ex_id];
            let rec = rv.row(row);
            for (a, b) in rec.iter().zip(&e.x) {
                whole.add((a - b) * (a - b));
            }
            let g = usize::from(e.artifact_flag);
            group_counts[g] += 1;
            for &p in artifact_region {
                let d = rec[p] - e.x[p];
                region_groups[g].add(d * d);
            }
        }
    }
    let dim = model.cfg.input_dim;
    let r = artifact_region.len();
    let per = |k: Kahan, count: usize, width: usize| -> Option<f64> {
        (count > 0 && width > 0).then(|| k.sum() / (count * width) as f64)
    };
    Ok(ReconBreakdown {
        whole_signal: whole.sum() / (n * dim) as f64,
        artifact_all: per(
            Kahan::merged(region_groups[0], region_groups[1]),
            group_counts[0] + group_counts[1],
            r,
        ),
        artifact_non_stimulus: per(region_groups[0], group_counts[0], r),
        artifact_stimulus: per(region_groups[1], group_counts[1], r),
    })
}

/// Compensated summation keeps the convex-combination identity between the
/// grouped artifact errors tight.
#[derive(Debug, Clone, Copy, Default)]
struct Kahan {
    s: f64,
    c: f64,
}

impl Kahan {
    fn add(&mut self, v: f64) {
        let y = v - self.c;
        let t = self.s + y;
        self.c = (t - self.s) - y;
        self.s = t;
    }

    fn sum(self) -> f64 {
        self.s
    }

    fn merged(a: Kahan, b: Kahan) -> Kahan {
        let mut m = a;
        m.add(b.s);
        m.add(-b.c);
        m
    }
}

// ── Active-feature statistics ───────────────────────────────────────────

#[derive(Debug, Clone, PartialEq)]
pub struct ActiveStats {
    pub n: usize,
    pub mean: f64,
    /// Most frequent active count (ties resolve to the smallest count).
    pub mode: usize,
    /// (active_count, frequency) pairs, ascending by count.
    pub histogram: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActiveFeatureReport {
    pub group0: Option<ActiveStats>,
    pub group1: Option<ActiveStats>,
}

impl ActiveFeatureReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("group,n,mean,mode\n");
        for (name, g) in [("group0", &self.group0), ("group1", &self.group1)] {
            match g {
                Some(st) => s.push_str(&format!("{name},{},{:.6},{}\n", st.n, st.mean, st.mode)),
                None => s.push_str(&format!("{name},0,absent,absent\n")),
            }
        }
        s
    }
}

/// Per-example row sums of the hard mask, aggregated per group flag.
pub fn active_feature_stats(z: &Tensor, group_flags: &[bool]) -> ActiveFeatureReport {
    assert_eq!(z.shape()[0], group_flags.len());
    assert!(
        z.data().iter().all(|&v| v == 0.0 || v == 1.0),
        "active-feature stats need a hard binary mask"
    );
    let mut counts: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for (i, &flag) in group_flags.iter().enumerate() {
        let c = z.row(i).iter().map(|&v| v as usize).sum::<usize>();
        counts[usize::from(flag)].push(c);
    }
    let stats = |cs: &Vec<usize>| -> Option<ActiveStats> {
        if cs.is_empty() {
            return None;
        }
        let mean = cs.iter().sum::<usize>() as f64 / cs.len() as f64;
        let max = *cs.iter().max().expect("non-empty");
        let mut hist = vec![0usize; max + 1];
        for &c in cs {
            hist[c] += 1;
        }
        let mode = hist
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
            .map(|(c, _)| c)
            .expect("non-empty");
        let histogram = hist
            .into_iter()
            .enumerate()
            .filter(|(_, f)| *f > 0)
            .collect();
        Some(ActiveStats {
            n: cs.len(),
            mean,
            mode,
            histogram,
        })
    };
    ActiveFeatureReport {
        group0: stats(&counts[0]),
        group1: stats(&counts[1]),
    }
}

// ── Triggering units ────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq)]
pub struct TriggerUnitReport {
    /// Activation rate per unit in group 0 (flag = false).
    pub rate0: Vec<f64>,
    /// Activation rate per unit in group 1 (flag = true).
    pub rate1: Vec<f64>,
    /// All units ranked by |rate1 − rate0| descending (ties: lower index).
    pub ranked: Vec<(usize, f64)>,
    /// Units whose gap meets the threshold.
    pub selected: Vec<usize>,
    pub gap_threshold: f64,
}

impl TriggerUnitReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("unit,rate_group0,rate_group1,gap,selected\n");
        for &(u, gap) in &self.ranked {
            s.push_str(&format!(
                "{u},{:.6},{:.6},{gap:.6},{}\n",
                self.rate0[u],
                self.rate1[u],
                self.selected.contains(&u)
            ));
        }
        s
    }
}

/// Per-unit activation-rate gap between the two groups; units at or above
/// the threshold are the triggering candidates. The full ranking is always
/// reported, even when nothing is selected.
pub fn find_triggering_units(
    z: &Tensor,
    group_flags: &[bool],
    gap_threshold: f64,
) -> TriggerUnitReport {
    assert_eq!(z.shape()[0], group_flags.len());
    let k = z.shape()[1];
    let n1 = group_flags.iter().filter(|f| **f).count();
    let n0 = group_flags.len() - n1;
    assert!(n0 > 0 && n1 > 0, "both groups must be non-empty");
    let mut rate0 = vec![0.0; k];
    let mut rate1 = vec![0.0; k];
    for (i, &flag) in group_flags.iter().enumerate() {
        let row = z.row(i);
        let target = if flag { &mut rate1 } else { &mut rate0 };
        for (r, &v) in target.iter_mut().zip(row) {
            *r += v;
        }
    }
    for r in &mut rate0 {
        *r /= n0 as f64;
    }
    for r in &mut rate1 {
        *r /= n1 as f64;
    }
    let mut ranked: Vec<(usize, f64)> = (0..k).map(|u| (u, (rate1[u] - rate0[u]).abs())).collect();
    ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).expect("finite gaps").then(a.0.cmp(&b.0)));
    let selected = ranked
        .iter()
        .filter(|(_, g)| *g >= gap_threshold)
        .map(|(u, _)| *u)
        .collect();
    TriggerUnitReport {
        rate0,
        rate1,
        ranked,
        selected,
        gap_threshold,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn z_from(rows: &[&[f64]]) -> Tensor {
        let k = rows[0].len();
        let data: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Tensor::from_vec(vec![rows.len(), k], data).unwrap()
    }

    #[test]
    fn planted_unit_recovered_with_gap_one() {
        // unit 3 equals the group flag exactly
        let flags = [false, false, true, true, true, false];
        let rows: Vec<Vec<f64>> = flags
            .iter()
            .map(|&f| vec![1.0, 0.0, 1.0, f64::from(u8::from(f)), 0.0])
            .collect();
        let z = z_from(&rows.iter().map(|r| r.as_slice()).collect::<Vec<_>>());
        let rep = find_triggering_units(&z, &flags, 0.9);
        assert_eq!(rep.selected, vec![3]);
        assert_eq!(rep.ranked[0], (3, 1.0));
        assert_eq!(rep.ranked.len(), 5);
    }

    #[test]
    fn planted_gap_family_recovered_and_half_gap_excluded() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let n = 4000;
        let flags: Vec<bool> = (0..n).map(|i| i % 2 == 0).collect();
        // unit 0: gap 1.0; unit 1: gap 0.95; unit 2: gap 0.5; unit 3: gap 0
        let rows: Vec<Vec<f64>> = flags
            .iter()
            .map(|&f| {
                let g = f64::from(u8::from(f));
                let mut flip = |p_on: f64, p_off: f64| {
                    let p = if f { p_on } else { p_off };
                    f64::from(u8::from(rng.random::<f64>() < p))
                };
                vec![g, flip(0.975, 0.025), flip(0.75, 0.25), flip(0.5, 0.5)]
            })
            .collect();
        let z = z_from(&rows.iter().map(|r| r.as_slice()).collect::<Vec<_>>());
        let rep = find_triggering_units(&z, &flags, 0.9);
        assert_eq!(rep.selected, vec![0, 1], "{:?}", rep.ranked);
    }

    #[test]
    fn random_mask_selects_nothing() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 10_000;
        let flags: Vec<bool> = (0..n).map(|_| rng.random::<bool>()).collect();
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..8).map(|_| f64::from(u8::from(rng.random::<bool>()))).collect())
            .collect();
        let z = z_from(&rows.iter().map(|r| r.as_slice()).collect::<Vec<_>>());
        let rep = find_triggering_units(&z, &flags, 0.9);
        assert!(rep.selected.is_empty(), "{:?}", rep.ranked);
        assert_eq!(rep.ranked.len(), 8);
    }

    #[test]
    fn active_stats_saturated_and_empty_masks() {
        let z = z_from(&[&[1.0, 1.0, 1.0], &[1.0, 1.0, 1.0]]);
        let rep = active_feature_stats(&z, &[true, true]);
        assert!(rep.group0.is_none());
        let g1 = rep.group1.unwrap();
        assert_eq!(g1.mode, 3);
        assert_eq!(g1.mean, 3.0);

        let z0 = z_from(&[&[0.0, 0.0, 0.0]]);
        let rep = active_feature_stats(&z0, &[false]);
        assert_eq!(rep.group0.unwrap().mode, 0);
    }

    #[test]
    fn stratified_halves_balance_classes() {
        let targets: Vec<usize> = (0..40).map(|i| i % 4).collect();
        let (a, b) = stratified_halves(&targets, 5);
        assert_eq!(a.len() + b.len(), 40);
        for class in 0..4 {
            let ca = a.iter().filter(|&&i| targets[i] == class).count();
            let cb = b.iter().filter(|&&i| targets[i] == class).count();
            assert_eq!(ca, 5);
            assert_eq!(cb, 5);
        }
    }
}
