//! Command-line entry point for the two-stage training pipeline.
//!
//! Exit codes: 0 success, 1 validation or I/O error, 2 theory check failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use tailfuse::pipeline::{
    cmd_eval, cmd_gen_data, cmd_pretrain, cmd_probe, cmd_theory, cmd_train_joint, RunConfig,
    FILE_BASELINE, FILE_JOINT,
};

#[derive(Parser)]
#[command(
    name = "tailfuse",
    version,
    about = "Two-stage multimodal regression on long-tailed synthetic data: adaptive-margin contrastive pretraining, sharpness-aware gradient-modulated joint training, grouped evaluation, and numerical theory checks."
)]
struct Cli {
    /// Run config (TOML); built-in desk-scale defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Override the config output directory.
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic long-tailed dataset (train/test CSV + summary).
    GenData,
    /// Stage 1: adaptive-margin contrastive pretraining, one encoder per modality.
    Pretrain,
    /// Stage 2: joint training with sharpness-aware gradient modulation.
    TrainJoint {
        /// Train the naive joint baseline instead (plain Adam, no stage-1 init).
        #[arg(long)]
        baseline: bool,
    },
    /// Evaluate a checkpoint on the test split with grouped metrics.
    Eval {
        /// Checkpoint to evaluate; defaults to the run's joint checkpoint.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Baseline checkpoint for a side-by-side comparison.
        #[arg(long)]
        baseline_checkpoint: Option<PathBuf>,
    },
    /// Run the numerical theory checks; nonzero exit on any failure.
    Theory,
    /// Double-well optimizer probe: modulated vs fixed gamma traces.
    Probe,
}

fn load_config(cli: &Cli) -> tailfuse::Result<(RunConfig, String)> {
    let (mut cfg, mut snapshot) = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            (RunConfig::from_toml(&text)?, text)
        }
        None => {
            let cfg = RunConfig::default();
            let text = cfg.to_toml()?;
            (cfg, text)
        }
    };
    let mut overridden = false;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
        overridden = true;
    }
    if let Some(dir) = &cli.output_dir {
        cfg.output_dir = dir.clone();
        overridden = true;
    }
    if overridden {
        cfg.validate()?;
        snapshot = cfg.to_toml()?;
    }
    Ok((cfg, snapshot))
}

fn run(cli: &Cli) -> tailfuse::Result<ExitCode> {
    let (cfg, snapshot) = load_config(cli)?;
    match &cli.command {
        Command::GenData => {
            let bundle = cmd_gen_data(&cfg, &snapshot)?;
            println!(
                "wrote {} train / {} test samples to {}",
                bundle.summary.n_train,
                bundle.summary.n_test,
                cfg.output_dir.display()
            );
            println!(
                "train groups: many {} / middle {} / few {}",
                bundle.summary.group_counts_train.many,
                bundle.summary.group_counts_train.middle,
                bundle.summary.group_counts_train.few
            );
        }
        Command::Pretrain => {
            let out = cmd_pretrain(&cfg)?;
            for (k, log) in out.logs.iter().enumerate() {
                let first = log.first().map(|l| l.loss).unwrap_or(f64::NAN);
                let last = log.last().map(|l| l.loss).unwrap_or(f64::NAN);
                println!(
                    "modality {k}: {} steps, loss {first:.4} -> {last:.4}",
                    log.len()
                );
            }
        }
        Command::TrainJoint { baseline } => {
            let out = cmd_train_joint(&cfg, *baseline)?;
            let label = if *baseline { "baseline" } else { "modulated" };
            let last = out.reports.last();
            println!(
                "{label} joint training: {} steps, final fused loss {:.4}",
                out.reports.len(),
                last.map(|r| r.loss_mm).unwrap_or(f64::NAN)
            );
            if !*baseline {
                let lo = out
                    .reports
                    .iter()
                    .map(|r| r.gamma)
                    .fold(f64::INFINITY, f64::min);
                let hi = out.reports.iter().map(|r| r.gamma).fold(0.0f64, f64::max);
                println!("gamma range over the run: [{lo:.3}, {hi:.3}]");
            }
        }
        Command::Eval {
            checkpoint,
            baseline_checkpoint,
        } => {
            let ckpt = checkpoint
                .clone()
                .unwrap_or_else(|| cfg.output_dir.join(FILE_JOINT));
            let base = baseline_checkpoint.clone().or_else(|| {
                let p = cfg.output_dir.join(FILE_BASELINE);
                p.exists().then_some(p)
            });
            let out = cmd_eval(&cfg, &ckpt, base.as_deref())?;
            println!("{}", serde_json::to_string_pretty(&out)?);
        }
        Command::Theory => {
            let out = cmd_theory(&cfg)?;
            for c in &out.checks {
                let tag = if c.passed { "PASS" } else { "FAIL" };
                println!("[{tag}] {}: {}", c.name, c.detail);
            }
            if !out.all_passed {
                let failing: Vec<&str> = out
                    .checks
                    .iter()
                    .filter(|c| !c.passed)
                    .map(|c| c.name.as_str())
                    .collect();
                eprintln!("theory checks failed: {}", failing.join(", "));
                return Ok(ExitCode::from(2));
            }
        }
        Command::Probe => {
            let out = cmd_probe(&cfg)?;
            println!(
                "modulated: final u {:.4}, final sharpness {:.3e}",
                out.sgm.final_u, out.sgm.final_sharpness
            );
            println!(
                "fixed gamma_min: final u {:.4}, final sharpness {:.3e}",
                out.fixed_gamma_min.final_u, out.fixed_gamma_min.final_sharpness
            );
            if let Some(p) = out.pearson_sgm {
                println!("pearson(sharpness, gamma) = {p:.3}");
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap would exit with 2; usage problems are validation errors here.
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
