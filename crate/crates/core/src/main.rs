use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;

use ourlt::cli;

#[derive(Parser)]
#[command(
    name = "ourlt",
    version,
    about = "Long-tail robustness experiments: orthogonal manifold shifts, \
             feature-space uncertainty training, and RIF reports"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Experiment config (TOML); built-in defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (overrides the config value).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run seed; repeat the flag for several (overrides the config list).
    #[arg(long = "seed")]
    seeds: Vec<u64>,
    /// Overwrite a directory that already holds a manifest.
    #[arg(long)]
    force: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Shift an image manifold along its orthogonal direction; emit PGM
    /// grids and a deviation table.
    ManifoldShift {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Paired baseline/augmented training runs, one directory per run.
    Train {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Robustness profile and RIF summary for a checkpointed model.
    RifReport {
        #[command(flatten)]
        common: CommonArgs,
        /// Model checkpoint to evaluate.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Method label stamped into the report tables.
        #[arg(long, default_value = "model")]
        label: String,
    },
    /// One augmented run per μ and seed; emits accuracy-vs-μ tables.
    MuSweep {
        #[command(flatten)]
        common: CommonArgs,
        /// μ value; repeat the flag for several (overrides the config list).
        #[arg(long = "mu")]
        mus: Vec<f64>,
    },
}

fn resolve(common: &CommonArgs, mus: Vec<f64>) -> ourlt::Result<cli::ExperimentConfig> {
    let cfg = cli::load_config(common.config.as_deref())?;
    cli::resolve_config(
        cfg,
        &cli::Overrides {
            out: common.out.clone(),
            seeds: common.seeds.clone(),
            mus,
        },
    )
}

fn run() -> ourlt::Result<()> {
    match Cli::parse().command {
        Command::ManifoldShift { common } => {
            let cfg = resolve(&common, Vec::new())?;
            cli::cmd_manifold_shift(&cfg, common.force)
        }
        Command::Train { common } => {
            let cfg = resolve(&common, Vec::new())?;
            cli::cmd_train(&cfg, common.force)
        }
        Command::RifReport {
            common,
            checkpoint,
            label,
        } => {
            let cfg = resolve(&common, Vec::new())?;
            cli::cmd_rif_report(&cfg, &checkpoint, &label, common.force)
        }
        Command::MuSweep { common, mus } => {
            let cfg = resolve(&common, mus)?;
            cli::cmd_mu_sweep(&cfg, common.force)
        }
    }
}

fn main() {
    if let Err(e) = run() {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
