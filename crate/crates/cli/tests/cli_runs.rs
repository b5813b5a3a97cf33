//! End-to-end runs of the `ibpd` binary: tiny generate → train → analyses,
//! determinism across re-runs, CSV schemas, and the exit-code contract.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_ibpd")
}

fn run(args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .output()
        .expect("spawn ibpd")
}

fn run_ok(args: &[&str]) {
    let out = run(args);
    assert!(
        out.status.success(),
        "ibpd {args:?} failed:\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

struct TinyRun {
    _dir: tempfile::TempDir,
    data: PathBuf,
    ckpt: PathBuf,
    root: PathBuf,
}

/// Generate a tiny ECG set and train a tiny cibp-vae on it.
fn tiny_ecg_run() -> TinyRun {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let gen = root.join("gen");
    run_ok(&[
        "generate",
        "--preset",
        "synth-ecg",
        "--seed",
        "11",
        "--out",
        gen.to_str().unwrap(),
        "--set",
        "dataset.synth_ecg.n_subjects=5",
        "--set",
        "dataset.synth_ecg.beats_per_subject=40",
        "--set",
        "dataset.synth_ecg.n_leads=2",
        "--set",
        "dataset.synth_ecg.samples_per_lead=16",
        "--set",
        "dataset.synth_ecg.task_classes=4",
        "--set",
        "dataset.synth_ecg.artifact_width=4",
    ]);
    let data = gen.join("dataset.bin");
    let train = root.join("train");
    run_ok(&[
        "train",
        "--data",
        data.to_str().unwrap(),
        "--model",
        "cibp-vae",
        "--seed",
        "11",
        "--out",
        train.to_str().unwrap(),
        "--set",
        "train.epochs=4",
        "--set",
        "train.batch_size=16",
        "--set",
        "model.ibp.k=6",
        "--set",
        "model.enc_hidden=[12]",
        "--set",
        "model.task_hidden=[12]",
        "--set",
        "model.dec_hidden=[12]",
    ]);
    TinyRun {
        data,
        ckpt: train.join("checkpoint.ckpt"),
        root,
        _dir: dir,
    }
}

fn analysis_args<'a>(r: &'a TinyRun, cmd: &'a str, out: &'a Path) -> Vec<String> {
    vec![
        cmd.to_string(),
        "--checkpoint".into(),
        r.ckpt.display().to_string(),
        "--data".into(),
        r.data.display().to_string(),
        "--seed".into(),
        "11".into(),
        "--out".into(),
        out.display().to_string(),
        "--set".into(),
        "analysis.probe_epochs=60".into(),
    ]
}

fn run_ok_vec(args: &[String]) {
    let args_ref: Vec<&str> = args.iter().map(String::as_str).collect();
    run_ok(&args_ref);
}

#[test]
fn full_pipeline_runs_and_is_deterministic() {
    let r = tiny_ecg_run();

    // every analysis command runs and re-runs byte-identically
    for cmd in ["probe", "recon", "features", "trigger"] {
        let out_a = r.root.join(format!("{cmd}_a"));
        let out_b = r.root.join(format!("{cmd}_b"));
        run_ok_vec(&analysis_args(&r, cmd, &out_a));
        run_ok_vec(&analysis_args(&r, cmd, &out_b));
        let file = format!("{cmd}.csv");
        assert_eq!(
            std::fs::read(out_a.join(&file)).unwrap(),
            std::fs::read(out_b.join(&file)).unwrap(),
            "{file} differs across identical runs"
        );
    }

    // probe CSV schema: 2×2 matrix plus the chance row
    let probe_csv = std::fs::read_to_string(r.root.join("probe_a/probe.csv")).unwrap();
    let lines: Vec<&str> = probe_csv.lines().collect();
    assert_eq!(lines.len(), 4);
    assert!(lines[0].starts_with("representation,task,"));
    assert!(lines[1].starts_with("y_t,"));
    assert!(lines[2].starts_with("y_c,"));
    assert!(lines[3].starts_with("random,"));

    // recon CSV names all four regions
    let recon_csv = std::fs::read_to_string(r.root.join("recon_a/recon.csv")).unwrap();
    for key in ["whole_signal", "artifact_all", "artifact_non_stimulus", "artifact_stimulus"] {
        assert!(recon_csv.contains(key), "recon.csv missing {key}");
    }

    // ablate with all units off, and with an explicit list
    let ab = r.root.join("ablate");
    let mut args = analysis_args(&r, "ablate", &ab);
    args.extend(["--index".into(), "0".into(), "--units".into(), "all-off".into()]);
    run_ok_vec(&args);
    assert!(ab.join("ablate.csv").exists());
    assert!(ab.join("ablate.svg").exists());

    // swap grid on signals writes CSV + SVG
    let sw = r.root.join("swap");
    let mut args = analysis_args(&r, "swap", &sw);
    args.extend(["--grid".into(), "2x3".into()]);
    run_ok_vec(&args);
    let swap_csv = std::fs::read_to_string(sw.join("swap.csv")).unwrap();
    assert_eq!(swap_csv.lines().count(), 1 + 2 * 3);
    assert!(sw.join("swap_grid.svg").exists());

    // resolved config is echoed everywhere with the defaults that applied
    let echo = std::fs::read_to_string(r.root.join("probe_a/resolved_config.json")).unwrap();
    for key in ["gap_threshold", "split_fractions", "learning_rate", "temperature"] {
        assert!(echo.contains(key), "config echo missing {key}");
    }
}

#[test]
fn cvae_report_has_zero_stick_kl_columns() {
    let r = tiny_ecg_run();
    let out = r.root.join("cvae");
    run_ok(&[
        "train",
        "--data",
        r.data.to_str().unwrap(),
        "--model",
        "c-vae",
        "--seed",
        "3",
        "--out",
        out.to_str().unwrap(),
        "--set",
        "train.epochs=2",
        "--set",
        "train.batch_size=16",
        "--set",
        "model.ibp.k=6",
        "--set",
        "model.enc_hidden=[12]",
        "--set",
        "model.task_hidden=[12]",
        "--set",
        "model.dec_hidden=[12]",
    ]);
    let csv = std::fs::read_to_string(out.join("report.csv")).unwrap();
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let kl_sticks = header.iter().position(|h| *h == "kl_sticks").unwrap();
    let kl_bern = header.iter().position(|h| *h == "kl_bernoulli").unwrap();
    for line in lines {
        let cols: Vec<&str> = line.split(',').collect();
        assert_eq!(cols[kl_sticks].parse::<f64>().unwrap(), 0.0);
        assert_eq!(cols[kl_bern].parse::<f64>().unwrap(), 0.0);
    }
}

#[test]
fn colored_digits_pipeline_with_builtin_fallback() {
    let dir = tempfile::tempdir().unwrap();
    let gen = dir.path().join("gen");
    // --mnist-dir points nowhere: the built-in glyph set kicks in with a warning
    let out = run(&[
        "generate",
        "--preset",
        "colored-digits",
        "--mnist-dir",
        "/nonexistent/mnist",
        "--seed",
        "5",
        "--out",
        gen.to_str().unwrap(),
        "--set",
        "dataset.digits.n_images=300",
    ]);
    assert!(out.status.success());
    assert!(
        String::from_utf8_lossy(&out.stderr).contains("built-in"),
        "expected a fallback warning"
    );
    let manifest = std::fs::read_to_string(gen.join("manifest.json")).unwrap();
    assert!(manifest.contains("\"preset\": \"colored-digits\""));

    let train = dir.path().join("train");
    run_ok(&[
        "train",
        "--data",
        gen.join("dataset.bin").to_str().unwrap(),
        "--model",
        "cibp-vae",
        "--seed",
        "5",
        "--out",
        train.to_str().unwrap(),
        "--set",
        "train.epochs=2",
        "--set",
        "train.batch_size=32",
        "--set",
        "model.ibp.k=6",
        "--set",
        "model.enc_hidden=[16]",
        "--set",
        "model.task_hidden=[16]",
        "--set",
        "model.dec_hidden=[16]",
        "--set",
        "model.likelihood=\"bernoulli\"",
    ]);

    // swap grid on digits writes a PPM whose geometry matches the grid
    let sw = dir.path().join("swap");
    run_ok(&[
        "swap",
        "--checkpoint",
        train.join("checkpoint.ckpt").to_str().unwrap(),
        "--data",
        gen.join("dataset.bin").to_str().unwrap(),
        "--seed",
        "5",
        "--out",
        sw.to_str().unwrap(),
        "--grid",
        "2x4",
    ]);
    let (w, h, _) = ibpd_cli::plot::read_ppm(&sw.join("swap_grid.ppm")).unwrap();
    assert_eq!(w, 4 * 28 + 5);
    assert_eq!(h, 2 * 28 + 3);

    // ablate emits the three PPM views
    let ab = dir.path().join("ablate");
    run_ok(&[
        "ablate",
        "--checkpoint",
        train.join("checkpoint.ckpt").to_str().unwrap(),
        "--data",
        gen.join("dataset.bin").to_str().unwrap(),
        "--seed",
        "5",
        "--out",
        ab.to_str().unwrap(),
        "--index",
        "0",
        "--units",
        "0,2",
    ]);
    for f in ["ablate_original.ppm", "ablate_reconstruction.ppm", "ablate_ablated.ppm"] {
        assert!(ab.join(f).exists(), "missing {f}");
    }
}

#[test]
fn exit_codes_follow_the_contract() {
    // usage error → 1
    let out = run(&["train", "--data", "x.bin", "--model", "nonsense", "--out", "/tmp/x"]);
    assert_eq!(out.status.code(), Some(1));
    let out = run(&["no-such-command"]);
    assert_eq!(out.status.code(), Some(1)); // clap usage error, mapped to 1

    // missing dataset file → runtime abort 2
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "train",
        "--data",
        dir.path().join("missing.bin").to_str().unwrap(),
        "--model",
        "cibp-vae",
        "--out",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));

    // checkpoint/dataset mismatch → explicit runtime error
    let r = tiny_ecg_run();
    let gen2 = r.root.join("gen2");
    run_ok(&[
        "generate",
        "--preset",
        "synth-ecg",
        "--seed",
        "12",
        "--out",
        gen2.to_str().unwrap(),
        "--set",
        "dataset.synth_ecg.n_subjects=5",
        "--set",
        "dataset.synth_ecg.beats_per_subject=10",
        "--set",
        "dataset.synth_ecg.n_leads=3",
        "--set",
        "dataset.synth_ecg.samples_per_lead=16",
    ]);
    let out = run(&[
        "probe",
        "--checkpoint",
        r.ckpt.to_str().unwrap(),
        "--data",
        gen2.join("dataset.bin").to_str().unwrap(),
        "--out",
        r.root.join("mismatch").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(
        String::from_utf8_lossy(&out.stderr).contains("mismatch"),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn nan_abort_exits_nonzero_with_diagnostic() {
    let r = tiny_ecg_run();
    let out_dir = r.root.join("explode");
    let out = run(&[
        "train",
        "--data",
        r.data.to_str().unwrap(),
        "--model",
        "cibp-vae",
        "--seed",
        "1",
        "--out",
        out_dir.to_str().unwrap(),
        "--set",
        "train.epochs=3",
        "--set",
        "train.learning_rate=1e18",
        "--set",
        "train.clip_norm=1e30",
        "--set",
        "model.ibp.k=6",
        "--set",
        "model.enc_hidden=[12]",
        "--set",
        "model.task_hidden=[12]",
        "--set",
        "model.dec_hidden=[12]",
    ]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("abort"), "stderr: {stderr}");
    // the rolled-back checkpoint is retained
    assert!(out_dir.join("checkpoint.ckpt").exists());
}
