use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ialseg::loss::LossKind;
use ialseg::net::Variant;
use ialseg_cli::{EvalArgs, GenDataArgs, TrainArgs};

#[derive(Parser)]
#[command(name = "ialseg", version, about = "Importance-aware loss experiments on synthetic street scenes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset (train and eval splits).
    GenData {
        /// Scene config JSON.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 200)]
        train: usize,
        #[arg(long, default_value_t = 50)]
        eval: usize,
    },
    /// Train a network; writes run.json, loss_curve.csv and checkpoints.
    Train {
        /// Run config JSON.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        loss: Option<LossKind>,
        #[arg(long)]
        net: Option<Variant>,
    },
    /// Evaluate a checkpoint; writes a per-class CSV and a grouped JSON report.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Run config (defaults to run.json beside the checkpoint).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Dataset directory (defaults to the run's evaluation split).
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        hierarchy: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Report name (defaults to `<net>_<loss>_seed<seed>`).
        #[arg(long)]
        id: Option<String>,
    },
    /// Compare two JSON reports; prints one verdict line per group.
    Compare {
        baseline: PathBuf,
        candidate: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference check of the loss and every layer.
    GradCheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        instances: usize,
    },
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    match cli.command {
        Command::GenData {
            config,
            seed,
            out,
            train,
            eval,
        } => {
            ialseg_cli::gen_data(&GenDataArgs {
                config,
                seed,
                out: out.clone(),
                train,
                eval,
            })?;
            println!("wrote {train} train / {eval} eval scenes to {}", out.display());
        }
        Command::Train {
            config,
            seed,
            out,
            loss,
            net,
        } => {
            let outcome = ialseg_cli::train(&TrainArgs {
                config,
                seed,
                out: out.clone(),
                loss,
                net,
            })?;
            if let Some(last) = outcome.log.last() {
                println!(
                    "epoch {} total {:.6} (I = {:?}, f = {:?})",
                    last.epoch + 1,
                    last.total,
                    last.per_group,
                    last.dynamic_weights
                );
            }
            println!("wrote {}", out.display());
        }
        Command::Eval {
            checkpoint,
            config,
            data,
            hierarchy,
            out,
            id,
        } => {
            let report = ialseg_cli::eval(&EvalArgs {
                checkpoint,
                config,
                data,
                hierarchy,
                out,
                id,
            })?;
            for g in &report.groups {
                let pct = |v: Option<f64>| v.map_or("n/a".into(), |x| format!("{:.1}", 100.0 * x));
                println!(
                    "G{} precision {} recall {} IoU {}",
                    g.group,
                    pct(g.mean.precision),
                    pct(g.mean.recall),
                    pct(g.mean.iou)
                );
            }
        }
        Command::Compare {
            baseline,
            candidate,
            out,
        } => {
            let (_, lines) = ialseg_cli::compare(&baseline, &candidate, out.as_deref())?;
            for line in lines {
                println!("{line}");
            }
        }
        Command::GradCheck { seed, instances } => {
            let report = ialseg_cli::grad_check(seed, instances)?;
            for line in ialseg_cli::format_grad_check(&report) {
                println!("{line}");
            }
            return Ok(report.passed());
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
