//! `stat`: command-line harness for pretraining, fine-tuning, evaluation,
//! ablations, gradient checks and synthetic data export.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use stat_core::checkpoint::Checkpoint;
use stat_core::config::ExperimentConfig;
use stat_core::data::SplitKind;
use stat_core::gradcheck::GradCheckOptions;
use stat_core::harness::{self, Experiment, FINETUNE_BEST};

#[derive(Parser)]
#[command(name = "stat", version, about = "Spatio-temporal tactile transformer experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; defaults to the config's `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Continue from a checkpoint written by an earlier run of this verb.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Self-supervised pretraining on the training split.
    Pretrain(Common),
    /// Supervised fine-tuning, from a pretraining checkpoint or from scratch.
    Finetune {
        #[command(flatten)]
        common: Common,
        /// Pretraining checkpoint to initialize from.
        #[arg(long)]
        init: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on one split.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Checkpoint to evaluate; defaults to `--resume`, then `<out>/finetune_best.ckpt`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: SplitKind,
    },
    /// Run the five embedding/pretraining-task ablation strategies.
    Ablate(Common),
    /// Finite-difference check of both training objectives.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1e-3)]
        tolerance: f64,
    },
    /// Write the config's synthetic dataset to disk.
    Synth(Common),
}

impl Common {
    fn load(&self) -> Result<(ExperimentConfig, PathBuf)> {
        let mut config =
            ExperimentConfig::load(&self.config).with_context(|| format!("loading {}", self.config.display()))?;
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        let out = match (&self.out, &config.output_dir) {
            (Some(o), _) => o.clone(),
            (None, Some(o)) => o.clone(),
            (None, None) => bail!("no output directory: pass --out or set output_dir"),
        };
        Ok((config, out))
    }

    fn resume(&self) -> Result<Option<Checkpoint>> {
        self.resume.as_deref().map(load_checkpoint).transpose()
    }

    fn no_resume(&self, verb: &str) -> Result<()> {
        if self.resume.is_some() {
            bail!("{verb} does not support --resume");
        }
        Ok(())
    }
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Pretrain(common) => {
            let (config, out) = common.load()?;
            let ckpt = harness::run_pretrain(&config, &out, common.resume()?.as_ref())?;
            println!("pretrained {} epochs, checkpoints in {}", ckpt.epoch, out.display());
        }
        Command::Finetune { common, init } => {
            let (config, out) = common.load()?;
            let init = init.as_deref().map(load_checkpoint).transpose()?;
            let outcome = harness::run_finetune(&config, &out, init.as_ref(), common.resume()?.as_ref())?;
            println!(
                "best epoch {} (validation acc1 {:.4}), saved to {}",
                outcome.best_epoch(),
                outcome.best.metrics.get("val_acc1").copied().unwrap_or(f64::NAN),
                out.join(FINETUNE_BEST).display()
            );
        }
        Command::Eval { common, checkpoint, split } => {
            let (config, out) = common.load()?;
            let path = checkpoint.or(common.resume.clone()).unwrap_or_else(|| out.join(FINETUNE_BEST));
            let ckpt = load_checkpoint(&path)?;
            let report = Experiment::new(config)?.write_evaluation(&ckpt, split, &out)?;
            println!(
                "{}: acc1 {:.4}, acc3 {:.4}, macro-F1 {:.4} over {} samples",
                split.as_str(),
                report.acc1,
                report.acc3,
                report.macro_f1,
                report.samples
            );
        }
        Command::Ablate(common) => {
            common.no_resume("ablate")?;
            let (config, out) = common.load()?;
            let table = harness::run_ablation_suite(&config, &out)?;
            print!("{}", table.to_csv());
        }
        Command::Gradcheck { common, tolerance } => {
            common.no_resume("gradcheck")?;
            let (config, out) = common.load()?;
            let suite = harness::run_gradcheck(&config, &out, GradCheckOptions::with_tolerance(tolerance))?;
            println!("pretraining objective:\n{}", suite.pretrain);
            println!("fine-tuning objective:\n{}", suite.finetune);
            if !suite.passed() {
                bail!("gradient check failed");
            }
        }
        Command::Synth(common) => {
            common.no_resume("synth")?;
            let (config, out) = common.load()?;
            let manifest = harness::run_synth(&config, &out)?;
            println!("wrote {} samples and manifest.csv to {}", manifest.records.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
