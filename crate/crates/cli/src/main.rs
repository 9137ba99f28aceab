use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use byzsgd::harness::{run_acceptance, run_experiment, validate_experiment, Experiment, Overrides};
use byzsgd::Mode;
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "byzsgd", version, about = "Byzantine-resilient SGD simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment file and write one CSV per sweep point.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Replace `run.seed` (including any seed sweep).
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
    },
    /// Run an acceptance suite (`all` runs every check).
    Accept {
        #[arg(long, default_value = "all")]
        suite: String,
    },
    /// Check topology bounds and the gradient variance bound without running.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Sync,
    Async,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Sync => Mode::Sync,
            ModeArg::Async => Mode::Async,
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match dispatch(Cli::parse().command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

/// Returns whether every executed check passed.
fn dispatch(command: Command) -> anyhow::Result<bool> {
    match command {
        Command::Run { config, out, seed, mode } => {
            let mut exp = Experiment::load(&config)?;
            Overrides { seed, mode: mode.map(Mode::from) }.apply(&mut exp);
            let runs = run_experiment(&exp, &out)
                .with_context(|| format!("running {}", config.display()))?;
            for r in &runs {
                let label = if r.label.is_empty() { "run" } else { &r.label };
                println!(
                    "{label}: {} steps, final |grad| {:.3e} -> {}",
                    r.steps,
                    r.final_grad_norm,
                    r.csv.display()
                );
            }
            Ok(true)
        }
        Command::Accept { suite } => {
            let reports = run_acceptance(&suite)?;
            let passed = reports.iter().filter(|r| r.passed).count();
            println!("{passed}/{} checks passed", reports.len());
            Ok(passed == reports.len())
        }
        Command::Validate { config } => {
            let exp = Experiment::load(&config)?;
            let reports = validate_experiment(&exp)?;
            let mut all = true;
            for v in &reports {
                let label = if v.label.is_empty() { "config" } else { &v.label };
                for w in &v.warnings {
                    println!("{label}: warning: {w}");
                }
                match &v.assumption {
                    Some(a) => {
                        for (batch, ratio) in &a.ratio_by_batch {
                            let ok = *ratio <= a.threshold;
                            println!(
                                "[{}] {label}: variance/norm ratio {ratio:.4} at batch {batch}, threshold {:.4}",
                                if ok { "PASS" } else { "FAIL" },
                                a.threshold
                            );
                        }
                    }
                    None => println!("[SKIP] {label}: initial model is optimal, ratio undefined"),
                }
                all &= v.passed();
            }
            println!("[PASS] topology bounds ({} point(s))", reports.len());
            Ok(all)
        }
    }
}
