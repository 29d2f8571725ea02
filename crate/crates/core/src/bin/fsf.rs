use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fsf::runner::{self, GridKind, Overrides, Preset};
use fsf::training::{OptimizerKind, UpdateRegime};

/// Few-shot fine-tuning experiments: pretrain, tune, benchmark, compare.
///
/// Exit codes: 0 success, 1 other failure, 2 configuration error,
/// 3 data error, 4 training failure.
#[derive(Parser, Debug)]
#[command(name = "fsf", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// TOML experiment configuration; missing keys fall back to the preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (artifacts go to <out>/<name>/).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Experiment name.
    #[arg(long, global = true)]
    name: Option<String>,
    /// Master seed for evaluation episodes.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Number of evaluation episodes.
    #[arg(long, global = true)]
    trials: Option<usize>,
    /// Fine-tuning regime: all, bn_fc, fc or none.
    #[arg(long, global = true)]
    regime: Option<UpdateRegime>,
    /// Fine-tuning optimizer.
    #[arg(long, global = true)]
    optimizer: Option<OptimizerKind>,
    /// Starting point for the configuration: low, high or cross-toy.
    #[arg(long, global = true)]
    preset: Option<Preset>,
    /// Checkpoint to load instead of <out>/<name>/checkpoint.fsf.
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
    /// Tuned-parameters file instead of <out>/<name>/reports/tuned.json.
    #[arg(long, global = true)]
    tuned: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train backbone and head on the base classes and write a checkpoint.
    Pretrain(#[command(flatten)] Common),
    /// Select fine-tuning learning rate and epochs on validation classes.
    Tune(#[command(flatten)] Common),
    /// Evaluate the configured pipeline over episodes of novel classes.
    Benchmark(#[command(flatten)] Common),
    /// Evaluate a regime or optimizer grid on shared episodes.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Grid to run: regimes or optimizers.
        #[arg(long)]
        grid: Option<GridKind>,
    },
    /// Write the configured synthetic dataset as PNG files plus a manifest.
    SynthData(#[command(flatten)] Common),
}

fn run(cli: Cli) -> fsf::Result<()> {
    let (common, grid) = match &cli.command {
        Command::Pretrain(c) | Command::Tune(c) | Command::Benchmark(c) | Command::SynthData(c) => (c, None),
        Command::Compare { common, grid } => (common, *grid),
    };
    let overrides = Overrides {
        out: common.out.clone(),
        name: common.name.clone(),
        seed: common.seed,
        trials: common.trials,
        regime: common.regime,
        optimizer: common.optimizer,
        grid,
    };
    let cfg = runner::resolve_config(common.config.as_deref(), common.preset, &overrides)?;
    let ckpt = common.checkpoint.as_deref();
    let tuned = common.tuned.as_deref();
    match &cli.command {
        Command::Pretrain(_) => {
            let out = runner::cmd_pretrain(&cfg)?;
            if let Some(w) = &out.warning {
                eprintln!("warning: {w}");
            }
            println!(
                "checkpoint {} (final loss {:.4}, accuracy {:.4})",
                out.checkpoint.display(),
                out.final_loss.unwrap_or(f64::NAN),
                out.final_accuracy.unwrap_or(f64::NAN)
            );
        }
        Command::Tune(_) => {
            let t = runner::cmd_tune(&cfg, ckpt)?;
            println!(
                "lr {} epochs {} (validation {:.4}, baseline {:.4})",
                t.lr, t.epochs, t.validation_accuracy, t.baseline_accuracy
            );
        }
        Command::Benchmark(_) => {
            let r = runner::cmd_benchmark(&cfg, ckpt, tuned)?;
            match (r.mean_accuracy, r.ci95_halfwidth) {
                (Some(m), Some(c)) => println!("accuracy {:.2} ± {:.2} %", 100.0 * m, 100.0 * c),
                _ => println!("no successful episodes"),
            }
            if r.failed_episodes > 0 {
                eprintln!("{} of {} episodes failed", r.failed_episodes, r.trials);
            }
        }
        Command::Compare { .. } => {
            let cmp = runner::cmd_compare(&cfg, ckpt, tuned)?;
            print!("{}", cmp.to_markdown());
        }
        Command::SynthData(_) => {
            let manifest = runner::cmd_synth_data(&cfg, common.out.as_deref())?;
            println!("manifest {}", manifest.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(runner::exit_code(&e) as u8)
        }
    }
}
