//! `ibpd <command> [--config file.json] [--key value overrides]`
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime abort.

use clap::{Args, Parser, Subcommand};
use ibpd_cli::commands::{self, CliError};
use ibpd_cli::config::RunConfig;
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "ibpd", version, about = "Conditional IBP-VAE experiments", disable_help_subcommand = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON config file; defaults apply for every missing field.
    #[arg(long)]
    config: Option<String>,
    /// Output directory.
    #[arg(long, default_value = "run")]
    out: PathBuf,
    /// Master seed (applies to data generation, model init and training).
    #[arg(long)]
    seed: Option<u64>,
    /// Config overrides as key.path=value (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

#[derive(Args, Clone)]
struct AnalysisArgs {
    #[command(flatten)]
    common: Common,
    /// Trained checkpoint file.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset container file.
    #[arg(long)]
    data: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset container plus manifest.
    Generate {
        #[command(flatten)]
        common: Common,
        /// Dataset preset: synth-ecg or colored-digits.
        #[arg(long)]
        preset: Option<String>,
        /// Directory with MNIST IDX files for the colored-digits preset.
        #[arg(long)]
        mnist_dir: Option<String>,
    },
    /// Train a model and write checkpoint + CSV report.
    Train {
        #[command(flatten)]
        common: Common,
        /// Dataset container file.
        #[arg(long)]
        data: PathBuf,
        /// Model: cibp-vae, c-vae or classifier.
        #[arg(long, default_value = "cibp-vae")]
        model: String,
    },
    /// Disentanglement probe accuracy matrix.
    Probe(AnalysisArgs),
    /// Reconstruction error breakdown over the artifact region.
    Recon(AnalysisArgs),
    /// Active-feature statistics per confounder group.
    Features(AnalysisArgs),
    /// Triggering-unit discovery.
    Trigger(AnalysisArgs),
    /// Generate with selected latent units overridden.
    Ablate {
        #[command(flatten)]
        args: AnalysisArgs,
        /// Test-split example index.
        #[arg(long, default_value_t = 0)]
        index: usize,
        /// all-off, trigger-off, or a comma list (3,7 off; +5 on).
        #[arg(long, default_value = "all-off")]
        units: String,
    },
    /// Swap confounder and task representations over a grid.
    Swap {
        #[command(flatten)]
        args: AnalysisArgs,
        /// Grid as ROWSxCOLS, rows = style sources, cols = task sources.
        #[arg(long, default_value = "4x10")]
        grid: String,
    },
}

fn parse_sets(common: &Common, extra: &[(String, String)]) -> Vec<(String, String)> {
    let mut sets: Vec<(String, String)> = Vec::new();
    if let Some(seed) = common.seed {
        for key in [
            "seed",
            "train.seed",
            "dataset.synth_ecg.seed",
            "dataset.digits.colorize_seed",
        ] {
            sets.push((key.to_string(), seed.to_string()));
        }
    }
    sets.extend(extra.iter().cloned());
    for kv in &common.sets {
        match kv.split_once('=') {
            Some((k, v)) => sets.push((k.to_string(), v.to_string())),
            None => sets.push((kv.clone(), String::new())),
        }
    }
    sets
}

fn resolve(common: &Common, extra: &[(String, String)]) -> Result<RunConfig, CliError> {
    let env: Vec<(String, String)> = std::env::vars().collect();
    Ok(RunConfig::resolve(
        common.config.as_deref(),
        &env,
        &parse_sets(common, extra),
    )?)
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Generate {
            common,
            preset,
            mnist_dir,
        } => {
            let mut extra = Vec::new();
            if let Some(p) = preset {
                extra.push(("dataset.preset".to_string(), format!("\"{p}\"")));
            }
            if let Some(d) = mnist_dir {
                extra.push(("dataset.digits.mnist_dir".to_string(), format!("\"{d}\"")));
            }
            let cfg = resolve(&common, &extra)?;
            commands::cmd_generate(&cfg, &common.out)?;
            Ok(())
        }
        Command::Train {
            common,
            data,
            model,
        } => {
            let cfg = resolve(&common, &[])?;
            let kind = commands::parse_model_kind(&model)?;
            commands::cmd_train(&cfg, &data, kind, &common.out)?;
            Ok(())
        }
        Command::Probe(a) => {
            let cfg = resolve(&a.common, &[])?;
            commands::cmd_probe(&cfg, &a.checkpoint, &a.data, &a.common.out)
        }
        Command::Recon(a) => {
            let cfg = resolve(&a.common, &[])?;
            commands::cmd_recon(&cfg, &a.checkpoint, &a.data, &a.common.out)
        }
        Command::Features(a) => {
            let cfg = resolve(&a.common, &[])?;
            commands::cmd_features(&cfg, &a.checkpoint, &a.data, &a.common.out)
        }
        Command::Trigger(a) => {
            let cfg = resolve(&a.common, &[])?;
            commands::cmd_trigger(&cfg, &a.checkpoint, &a.data, &a.common.out)
        }
        Command::Ablate { args, index, units } => {
            let cfg = resolve(&args.common, &[])?;
            commands::cmd_ablate(&cfg, &args.checkpoint, &args.data, &args.common.out, index, &units)
        }
        Command::Swap { args, grid } => {
            let cfg = resolve(&args.common, &[])?;
            let (r, c) = grid
                .split_once('x')
                .and_then(|(r, c)| Some((r.parse().ok()?, c.parse().ok()?)))
                .ok_or_else(|| CliError::Usage(format!("bad grid {grid:?}, expected RxC")))?;
            commands::cmd_swap(&cfg, &args.checkpoint, &args.data, &args.common.out, (r, c))
        }
    }
}

fn main() {
    // map clap's own errors onto exit code 1 per the CLI contract
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            std::process::exit(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
