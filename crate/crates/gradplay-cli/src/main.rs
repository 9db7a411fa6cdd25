//! `gradplay`: gradient play on tabular stochastic games from the command
//! line. Exit codes: 0 success, 1 check or assertion failure, 2 invalid input.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use gradplay_cli::config::ExperimentConfig;
use gradplay_cli::experiments;

#[derive(Parser)]
#[command(
    name = "gradplay",
    about = "Gradient play, equilibrium analysis, and theory checks for tabular stochastic games",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct CommonArgs {
    /// JSON experiment configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed; per-trial seeds are derived from it.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default `out`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Step size.
    #[arg(long)]
    eta: Option<f64>,
    /// Number of trials (per batch for ratio-sweep).
    #[arg(long)]
    trials: Option<usize>,
    /// Iteration budget per run.
    #[arg(long)]
    max_iters: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Multi-trial gradient play with per-trial trajectory files.
    Run(CommonArgs),
    /// Start next to the fully mixed equilibrium and record the escape.
    SaddleDemo {
        #[command(flatten)]
        common: CommonArgs,
        /// Radius of the initial ball around the mixed equilibrium.
        #[arg(long)]
        delta: Option<f64>,
    },
    /// Convergence-ratio sweep over the dilemma game's signal accuracy.
    RatioSweep {
        #[command(flatten)]
        common: CommonArgs,
        /// Batches per epsilon.
        #[arg(long)]
        batches: Option<usize>,
    },
    /// Enumerate and certify all strict equilibria of the configured game.
    Enumerate(CommonArgs),
    /// Run the randomized identity and bound checks.
    Check(CommonArgs),
    /// Stationarity and equilibrium-gap verdict for a policy file.
    VerifyPolicy {
        /// Policy file, JSON nested array [agent][state][action].
        policy: PathBuf,
        #[command(flatten)]
        common: CommonArgs,
        /// Equilibrium-gap tolerance for the verdict.
        #[arg(long, default_value_t = 1e-6)]
        gap_tol: f64,
    },
}

const EXIT_CHECK_FAILURE: u8 = 1;
const EXIT_INVALID_INPUT: u8 = 2;

fn load_config(common: &CommonArgs) -> Result<ExperimentConfig, String> {
    let mut config = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if common.seed.is_some() {
        config.seed = common.seed;
    }
    if common.eta.is_some() {
        config.eta = common.eta;
    }
    if common.trials.is_some() {
        config.trials = common.trials;
    }
    if common.max_iters.is_some() {
        config.max_iters = common.max_iters;
    }
    if common.out.is_some() {
        config.out = common.out.clone();
    }
    Ok(config)
}

fn out_dir(config: &ExperimentConfig) -> PathBuf {
    config.out.clone().unwrap_or_else(|| PathBuf::from("out"))
}

fn run_command(command: Command) -> Result<u8, String> {
    match command {
        Command::Run(common) => {
            let config = load_config(&common)?;
            let out = out_dir(&config);
            let summary = experiments::cmd_run(&config, &out)?;
            println!(
                "{} trials, eta {}, {} certificates known",
                summary.trials, summary.eta, summary.certificates
            );
            for trial in &summary.trial_summaries {
                println!(
                    "trial {:3}  iters {:6}  stop {:9}  J {:?}  gap {:.3e}  monotone {}  dest {}",
                    trial.trial,
                    trial.iterations,
                    trial.termination,
                    trial.final_total_rewards,
                    trial.final_ne_gap,
                    trial.monotone,
                    trial
                        .destination
                        .map_or("unconverged".to_string(), |d| format!("NE#{d}")),
                );
            }
            println!(
                "all monotone: {}; max final gap {:.3e}; wrote {}",
                summary.all_monotone,
                summary.max_final_ne_gap,
                out.display()
            );
            Ok(0)
        }
        Command::SaddleDemo { common, delta } => {
            let mut config = load_config(&common)?;
            if delta.is_some() {
                config.delta = delta;
            }
            let out = out_dir(&config);
            let report = experiments::cmd_saddle_demo(&config, &out)?;
            println!(
                "delta {:.3e}: escaped {} (at iter {:?}), {} iters, final gap {:.3e}, destination {}",
                report.delta,
                report.escaped,
                report.escaped_at,
                report.iterations,
                report.final_ne_gap,
                report
                    .destination
                    .map_or("unconverged".to_string(), |d| format!("NE#{d}")),
            );
            if report.delta > 0.0 && !report.escaped {
                eprintln!("assertion failure: trajectory never left the 10*delta ball");
                return Ok(EXIT_CHECK_FAILURE);
            }
            Ok(0)
        }
        Command::RatioSweep { common, batches } => {
            let mut config = load_config(&common)?;
            if batches.is_some() {
                config.batches = batches;
            }
            let out = out_dir(&config);
            let report = experiments::cmd_ratio_sweep(&config, &out)?;
            println!(
                "gamma {}, eta {}, {} batches x {} trials",
                report.gamma, report.eta, report.batches, report.trials_per_batch
            );
            println!("epsilon   delta_star   ratio mean +- std      unconverged");
            for point in &report.points {
                println!(
                    "{:<9} {:<12.6} ({:.1} +- {:.1})%          {}",
                    point.epsilon,
                    point.delta_star,
                    100.0 * point.mean,
                    100.0 * point.std,
                    point.unconverged
                );
            }
            println!("wrote {}", out.display());
            Ok(0)
        }
        Command::Enumerate(common) => {
            let config = load_config(&common)?;
            let out = out_dir(&config);
            let report = experiments::cmd_enumerate(&config, &out)?;
            println!(
                "{} candidates: {} strict, {} borderline",
                report.candidates,
                report.strict.len(),
                report.borderline
            );
            for row in &report.strict {
                println!(
                    "NE#{:<3} actions {:?}  delta* {:<12.6} radius {:.3e}  J {:?}",
                    row.index, row.actions, row.delta_star, row.attraction_radius, row.total_rewards
                );
            }
            println!("wrote {}", out.display());
            Ok(0)
        }
        Command::Check(common) => {
            let config = load_config(&common)?;
            let out = out_dir(&config);
            let suite = experiments::cmd_check(&config, &out)?;
            for report in &suite.reports {
                println!(
                    "{}: {}  (trials {}, skipped {}, max violation {:.3e}, tolerance {:.1e})",
                    report.name,
                    if report.pass { "PASS" } else { "FAIL" },
                    report.trials,
                    report.skipped,
                    report.max_violation,
                    report.tolerance
                );
            }
            if suite.all_pass {
                Ok(0)
            } else {
                eprintln!(
                    "one or more checks failed; witnesses written to {}",
                    out.display()
                );
                Ok(EXIT_CHECK_FAILURE)
            }
        }
        Command::VerifyPolicy {
            policy,
            common,
            gap_tol,
        } => {
            let config = load_config(&common)?;
            let out = config.out.clone();
            let report =
                experiments::cmd_verify_policy(&config, &policy, gap_tol, out.as_deref())?;
            println!(
                "stationary: {} (max improvement {:.3e} at tol {:.1e})",
                report.stationary, report.max_improvement, report.stationarity_tol
            );
            println!(
                "equilibrium gap: {:.3e} per agent {:?} (tol {:.1e})",
                report.ne_gap, report.per_agent_gaps, report.gap_tol
            );
            if report.pass {
                println!("verdict: equilibrium");
                Ok(0)
            } else {
                println!("verdict: not an equilibrium at the given tolerances");
                Ok(EXIT_CHECK_FAILURE)
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run_command(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(message) => {
            eprintln!("error: {message}");
            ExitCode::from(EXIT_INVALID_INPUT)
        }
    }
}
