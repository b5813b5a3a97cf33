//! Command implementations. Every command is a pure function of the resolved
//! config and its input files; outputs are byte-identical across re-runs
//! except the labeled `generated_at` field in manifests.

use crate::config::RunConfig;
use crate::plot::{self, Series};
use ibpd_core::analysis::{
    ablate_generate, active_feature_stats, extract_representations, find_triggering_units,
    probe_report, recon_breakdown, ConfounderTarget, ProbeConfig, UnitOp, YtSource,
};
use ibpd_core::data::{
    colorize_digits, read_dataset, read_idx_images, read_idx_labels, split_by_subject,
    synth_ecg_dataset, ColorizeConfig, Dataset, DatasetMeta, LabeledExample, SplitMode, SplitSet,
};
use ibpd_core::model::{Model, ModelKind};
use ibpd_core::training::{load_checkpoint, save_checkpoint, train, TrainError};
use serde::Serialize;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage error: {0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] crate::config::ConfigError),
    #[error(transparent)]
    Data(#[from] ibpd_core::data::DataError),
    #[error(transparent)]
    Tensor(#[from] ibpd_core::tensor::TensorError),
    #[error(transparent)]
    Plot(#[from] crate::plot::PlotError),
    #[error("{0}")]
    Runtime(String),
    #[error("training aborted: {0}")]
    Abort(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    /// 1 for usage errors, 2 for runtime aborts.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 1,
            _ => 2,
        }
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|source| CliError::Io {
        path: dir.display().to_string(),
        source,
    })
}

fn echo_config(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    write_file(&out.join("resolved_config.json"), cfg.echo_json())
}

fn split_mode_for(kind: &str) -> SplitMode {
    if kind == "colored-digits" {
        // no subject structure: plain example-level split
        SplitMode::ByExample
    } else {
        SplitMode::BySubject
    }
}

fn load_splits(cfg: &RunConfig, ds: &Dataset) -> Result<SplitSet, CliError> {
    Ok(split_by_subject(
        ds.examples.clone(),
        cfg.dataset.split_fractions,
        cfg.seed,
        split_mode_for(&ds.meta.kind),
    )?)
}

// ── generate ────────────────────────────────────────────────────────────

#[derive(Serialize)]
struct Manifest {
    preset: String,
    seed: u64,
    config_hash: String,
    example_count: usize,
    input_dim: usize,
    task_classes: usize,
    dataset_config: serde_json::Value,
    /// Timestamp metadata; the one field excluded from byte-identity.
    generated_at: String,
}

pub fn cmd_generate(cfg: &RunConfig, out: &Path) -> Result<PathBuf, CliError> {
    ensure_dir(out)?;
    let ds = match cfg.dataset.preset.as_str() {
        "synth-ecg" => synth_ecg_dataset(&cfg.dataset.synth_ecg),
        "colored-digits" => build_colored_digits(cfg)?,
        other => return Err(CliError::Usage(format!("unknown preset {other:?}"))),
    };
    let path = out.join("dataset.bin");
    ibpd_core::data::write_dataset(&path, &ds)?;
    let manifest = Manifest {
        preset: cfg.dataset.preset.clone(),
        seed: cfg.seed,
        config_hash: cfg.hash(),
        example_count: ds.examples.len(),
        input_dim: ds.meta.input_dim,
        task_classes: ds.meta.task_classes,
        dataset_config: ds.meta.config.clone(),
        generated_at: unix_timestamp(),
    };
    write_file(
        &out.join("manifest.json"),
        serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n",
    )?;
    echo_config(cfg, out)?;
    Ok(path)
}

fn unix_timestamp() -> String {
    let secs = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    format!("unix:{secs}")
}

fn build_colored_digits(cfg: &RunConfig) -> Result<Dataset, CliError> {
    let dc = &cfg.dataset.digits;
    let n = dc.n_images;
    let (images, labels) = match &dc.mnist_dir {
        Some(dir) => {
            let img_path = Path::new(dir).join("train-images-idx3-ubyte");
            let lbl_path = Path::new(dir).join("train-labels-idx1-ubyte");
            if img_path.exists() && lbl_path.exists() {
                let (mut images, (rows, cols)) = read_idx_images(&img_path)?;
                if rows != 28 || cols != 28 {
                    return Err(CliError::Runtime(format!(
                        "expected 28x28 images, got {rows}x{cols}"
                    )));
                }
                let mut labels: Vec<usize> =
                    read_idx_labels(&lbl_path)?.into_iter().map(usize::from).collect();
                images.truncate(n);
                labels.truncate(n);
                (images, labels)
            } else {
                eprintln!(
                    "warning: IDX files not found under {dir:?}; using the built-in synthetic glyph set"
                );
                ibpd_core::data::synth_digit_glyphs(n, cfg.seed)
            }
        }
        None => ibpd_core::data::synth_digit_glyphs(n, cfg.seed),
    };
    let examples = colorize_digits(
        &images,
        &labels,
        &ColorizeConfig {
            seed: dc.colorize_seed,
        },
    )?;
    let task_classes = labels.iter().copied().max().unwrap_or(0) + 1;
    Ok(Dataset {
        meta: DatasetMeta {
            kind: "colored-digits".into(),
            input_dim: ibpd_core::data::COLOR_INPUT_DIM,
            task_classes,
            subject_count: examples.len(),
            artifact_region: vec![],
            config: serde_json::json!({
                "n_images": n,
                "mnist_dir": dc.mnist_dir,
                "colorize_seed": dc.colorize_seed,
                "glyph_seed": cfg.seed,
            }),
        },
        examples,
    })
}

// ── train ───────────────────────────────────────────────────────────────

pub fn parse_model_kind(s: &str) -> Result<ModelKind, CliError> {
    match s {
        "cibp-vae" => Ok(ModelKind::CibpVae),
        "c-vae" => Ok(ModelKind::CVae),
        "classifier" => Ok(ModelKind::Classifier),
        other => Err(CliError::Usage(format!(
            "unknown model {other:?} (expected cibp-vae, c-vae or classifier)"
        ))),
    }
}

pub fn cmd_train(
    cfg: &RunConfig,
    data: &Path,
    model_kind: ModelKind,
    out: &Path,
) -> Result<PathBuf, CliError> {
    ensure_dir(out)?;
    let ds = read_dataset(data)?;
    let splits = load_splits(cfg, &ds)?;
    let model_cfg = cfg.model.to_model_config(ds.meta.input_dim, ds.meta.task_classes);
    let mut model = Model::new(model_kind, model_cfg, cfg.seed)?;
    let report = match train(&mut model, &splits, &cfg.train) {
        Ok(r) => r,
        Err(TrainError::NanAbort {
            epoch,
            step,
            detail,
            report,
        }) => {
            // keep the rolled-back checkpoint and the partial report
            let ckpt = out.join("checkpoint.ckpt");
            save_checkpoint(&model, &ckpt)?;
            write_file(&out.join("report.csv"), report.to_csv())?;
            write_file(&out.join("summary.txt"), report.summary_text())?;
            echo_config(cfg, out)?;
            return Err(CliError::Abort(format!(
                "non-finite loss at epoch {epoch}, step {step}: {detail}"
            )));
        }
        Err(e) => return Err(CliError::Runtime(e.to_string())),
    };
    let ckpt = out.join("checkpoint.ckpt");
    save_checkpoint(&model, &ckpt)?;
    write_file(&out.join("report.csv"), report.to_csv())?;
    write_file(&out.join("summary.txt"), report.summary_text())?;
    echo_config(cfg, out)?;
    Ok(ckpt)
}

// ── analysis commands ───────────────────────────────────────────────────

struct AnalysisInputs {
    model: Model,
    ds: Dataset,
    splits: SplitSet,
}

fn load_analysis_inputs(
    cfg: &RunConfig,
    checkpoint: &Path,
    data: &Path,
) -> Result<AnalysisInputs, CliError> {
    let model = load_checkpoint(checkpoint)?;
    let ds = read_dataset(data)?;
    if model.cfg.input_dim != ds.meta.input_dim || model.cfg.task_classes != ds.meta.task_classes {
        return Err(CliError::Runtime(format!(
            "checkpoint/config mismatch: checkpoint expects input_dim {} / {} classes, dataset has {} / {}",
            model.cfg.input_dim, model.cfg.task_classes, ds.meta.input_dim, ds.meta.task_classes
        )));
    }
    let splits = load_splits(cfg, &ds)?;
    Ok(AnalysisInputs { model, ds, splits })
}

fn probe_cfg_of(cfg: &RunConfig) -> ProbeConfig {
    ProbeConfig {
        epochs: cfg.analysis.probe_epochs,
        learning_rate: cfg.analysis.probe_learning_rate,
        hidden: cfg.analysis.probe_hidden,
        seed: cfg.analysis.seed,
    }
}

pub fn cmd_probe(cfg: &RunConfig, checkpoint: &Path, data: &Path, out: &Path) -> Result<(), CliError> {
    ensure_dir(out)?;
    let inputs = load_analysis_inputs(cfg, checkpoint, data)?;
    let target = if inputs.ds.meta.kind == "colored-digits" {
        ConfounderTarget::ColorId
    } else {
        ConfounderTarget::SubjectId
    };
    let report = probe_report(
        &inputs.model,
        &inputs.ds.examples,
        target,
        &probe_cfg_of(cfg),
        cfg.analysis.seed,
    )?;
    write_file(&out.join("probe.csv"), report.to_csv())?;
    let summary = format!(
        "probe over {} examples ({} probe-train / {} probe-eval), confounder target {}\n\
         y_t -> task {:.4} | y_t -> confounder {:.4}\n\
         y_c -> task {:.4} | y_c -> confounder {:.4}\n\
         chance: task {:.4}, confounder {:.4}\n",
        inputs.ds.examples.len(),
        report.n_probe_train,
        report.n_probe_eval,
        report.confounder_target,
        report.accuracy[0][0],
        report.accuracy[0][1],
        report.accuracy[1][0],
        report.accuracy[1][1],
        report.chance[0],
        report.chance[1],
    );
    write_file(&out.join("probe_summary.txt"), summary)?;
    echo_config(cfg, out)
}

pub fn cmd_recon(cfg: &RunConfig, checkpoint: &Path, data: &Path, out: &Path) -> Result<(), CliError> {
    ensure_dir(out)?;
    let inputs = load_analysis_inputs(cfg, checkpoint, data)?;
    let report = recon_breakdown(
        &inputs.model,
        &inputs.splits.test,
        &inputs.ds.meta.artifact_region,
        cfg.analysis.seed,
    )?;
    write_file(&out.join("recon.csv"), report.to_csv())?;
    echo_config(cfg, out)
}

fn masked_representations(
    inputs: &AnalysisInputs,
    seed: u64,
) -> Result<(ibpd_core::tensor::Tensor, Vec<bool>), CliError> {
    let reps = extract_representations(&inputs.model, &inputs.splits.test, seed)?;
    let z = reps.z.ok_or_else(|| {
        CliError::Runtime("this analysis needs the binary mask of a cibp-vae checkpoint".into())
    })?;
    let flags: Vec<bool> = inputs.splits.test.iter().map(|e| e.artifact_flag).collect();
    Ok((z, flags))
}

pub fn cmd_features(cfg: &RunConfig, checkpoint: &Path, data: &Path, out: &Path) -> Result<(), CliError> {
    ensure_dir(out)?;
    let inputs = load_analysis_inputs(cfg, checkpoint, data)?;
    let (z, flags) = masked_representations(&inputs, cfg.analysis.seed)?;
    let report = active_feature_stats(&z, &flags);
    write_file(&out.join("features.csv"), report.to_csv())?;
    echo_config(cfg, out)
}

pub fn cmd_trigger(cfg: &RunConfig, checkpoint: &Path, data: &Path, out: &Path) -> Result<(), CliError> {
    ensure_dir(out)?;
    let inputs = load_analysis_inputs(cfg, checkpoint, data)?;
    let (z, flags) = masked_representations(&inputs, cfg.analysis.seed)?;
    let report = find_triggering_units(&z, &flags, cfg.analysis.gap_threshold);
    write_file(&out.join("trigger.csv"), report.to_csv())?;
    echo_config(cfg, out)
}

/// Unit spec grammar: `all-off`, `trigger-off`, or a comma list of indices
/// with optional sign (`3,7` turns off; `+5` turns on).
pub fn parse_unit_ops(
    spec: &str,
    k: usize,
    trigger_units: impl FnOnce() -> Result<Vec<usize>, CliError>,
) -> Result<Vec<(usize, UnitOp)>, CliError> {
    match spec {
        "all-off" => Ok((0..k).map(|u| (u, UnitOp::SetOff)).collect()),
        "trigger-off" => Ok(trigger_units()?.into_iter().map(|u| (u, UnitOp::SetOff)).collect()),
        list => list
            .split(',')
            .map(|tok| {
                let tok = tok.trim();
                let (op, digits) = match tok.strip_prefix('+') {
                    Some(rest) => (UnitOp::SetOn, rest),
                    None => (UnitOp::SetOff, tok.strip_prefix('-').unwrap_or(tok)),
                };
                digits
                    .parse::<usize>()
                    .map(|u| (u, op))
                    .map_err(|_| CliError::Usage(format!("bad unit token {tok:?}")))
            })
            .collect(),
    }
}

pub fn cmd_ablate(
    cfg: &RunConfig,
    checkpoint: &Path,
    data: &Path,
    out: &Path,
    example_index: usize,
    units: &str,
) -> Result<(), CliError> {
    ensure_dir(out)?;
    let inputs = load_analysis_inputs(cfg, checkpoint, data)?;
    let test = &inputs.splits.test;
    let example = test.get(example_index).ok_or_else(|| {
        CliError::Usage(format!(
            "example index {example_index} out of range (test split has {})",
            test.len()
        ))
    })?;
    let seed = cfg.analysis.seed;
    let ops = parse_unit_ops(units, inputs.model.cfg.k(), || {
        let (z, flags) = masked_representations(&inputs, seed)?;
        Ok(find_triggering_units(&z, &flags, cfg.analysis.gap_threshold).selected)
    })?;
    let recon = ablate_generate(&inputs.model, &example.x, &[], YtSource::Predicted, seed)?;
    let ablated = ablate_generate(&inputs.model, &example.x, &ops, YtSource::Predicted, seed)?;

    let mut csv = String::from("position,original,reconstruction,ablated\n");
    for (i, ((o, r), a)) in example.x.iter().zip(&recon).zip(&ablated).enumerate() {
        csv.push_str(&format!("{i},{o:.9},{r:.9},{a:.9}\n"));
    }
    write_file(&out.join("ablate.csv"), csv)?;

    if inputs.ds.meta.kind == "colored-digits" {
        for (name, img) in [
            ("ablate_original.ppm", &example.x),
            ("ablate_reconstruction.ppm", &recon),
            ("ablate_ablated.ppm", &ablated),
        ] {
            let rgb = plot::planar_to_rgb8(img);
            plot::write_ppm(&out.join(name), 28, 28, &rgb)?;
        }
    } else {
        plot::write_svg_lines(
            &out.join("ablate.svg"),
            &[
                Series { label: "original", color: "black", values: &example.x },
                Series { label: "reconstruction", color: "steelblue", values: &recon },
                Series { label: "ablated", color: "crimson", values: &ablated },
            ],
            1200,
            300,
        )?;
    }
    echo_config(cfg, out)
}

pub fn cmd_swap(
    cfg: &RunConfig,
    checkpoint: &Path,
    data: &Path,
    out: &Path,
    grid: (usize, usize),
) -> Result<(), CliError> {
    ensure_dir(out)?;
    let (rows, cols) = grid;
    if rows == 0 || cols == 0 {
        return Err(CliError::Usage("grid must be RxC with R, C >= 1".into()));
    }
    let inputs = load_analysis_inputs(cfg, checkpoint, data)?;
    let test = &inputs.splits.test;
    if test.is_empty() {
        return Err(CliError::Runtime("empty test split".into()));
    }
    // task sources: first test example of each class, cycling; style sources:
    // first examples preferring distinct colors/subjects
    let mut task_sources = Vec::with_capacity(cols);
    let classes = inputs.ds.meta.task_classes;
    'outer: for want in 0..cols {
        for e in test.iter() {
            if e.task_label == want % classes {
                task_sources.push(e);
                continue 'outer;
            }
        }
        task_sources.push(&test[0]);
    }
    let mut style_sources: Vec<&LabeledExample> = Vec::with_capacity(rows);
    let mut seen = std::collections::BTreeSet::new();
    for e in test.iter() {
        let key = e.color_id.map_or(e.subject_id, u32::from);
        if seen.insert(key) {
            style_sources.push(e);
            if style_sources.len() == rows {
                break;
            }
        }
    }
    let mut i = 0;
    while style_sources.len() < rows {
        style_sources.push(&test[i % test.len()]);
        i += 1;
    }

    let seed = cfg.analysis.seed;
    let mut csv = String::from("row,col,style_subject,style_color,task_label\n");
    let mut cells = Vec::with_capacity(rows * cols);
    for (r, style) in style_sources.iter().enumerate() {
        for (c, task) in task_sources.iter().enumerate() {
            let gen = ibpd_core::analysis::swap_representations(
                &inputs.model,
                &style.x,
                &task.x,
                seed,
            )?;
            csv.push_str(&format!(
                "{r},{c},{},{},{}\n",
                style.subject_id,
                style.color_id.map_or(-1i32, i32::from),
                task.task_label
            ));
            cells.push(gen);
        }
    }
    write_file(&out.join("swap.csv"), csv)?;

    if inputs.ds.meta.kind == "colored-digits" {
        let tiles: Vec<Vec<u8>> = cells.iter().map(|c| plot::planar_to_rgb8(c)).collect();
        let (w, h, rgb) = plot::tile_rgb_grid(&tiles, rows, cols, 28);
        plot::write_ppm(&out.join("swap_grid.ppm"), w, h, &rgb)?;
    } else {
        // one polyline per cell, color-coded by style row
        let palette = ["black", "crimson", "seagreen", "steelblue", "darkorange", "purple"];
        let series: Vec<Series> = cells
            .iter()
            .enumerate()
            .map(|(i, v)| Series {
                label: "cell",
                color: palette[(i / cols) % palette.len()],
                values: v,
            })
            .collect();
        plot::write_svg_lines(&out.join("swap_grid.svg"), &series, 1200, 400)?;
    }
    echo_config(cfg, out)
}
