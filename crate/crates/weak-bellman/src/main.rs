//! Thin command-line front end over the experiment harness.
//!
//! Exit codes: 0 success, 1 configuration error, 2 infeasible-set abort.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use weak_bellman::harness::{self, ExperimentConfig, Mode};
use weak_bellman::Error;

#[derive(Parser)]
#[command(name = "weak-bellman", version, about = "Offline RL evaluation and optimization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Off-policy confidence intervals across seeds (and sample sizes).
    Evaluate(RunArgs),
    /// Mirror-descent actor-critic policy optimization.
    Optimize(RunArgs),
    /// Off-policy cost coefficient and its closed-form bounds.
    Opc(RunArgs),
    /// Coverage tally of the confidence interval across seeds.
    Coverage(RunArgs),
    /// Exponentiated-gradient regret against the adversarial bound.
    Regret(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config (flat key = value with [section] headers).
    #[arg(long)]
    config: PathBuf,
    /// Output directory for records.csv and summary.json.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Override the number of seeds in the config.
    #[arg(long)]
    seeds: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    jobs: Option<usize>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let (expected_mode, args) = match &cli.command {
        Command::Evaluate(a) => (Mode::Evaluate, a),
        Command::Optimize(a) => (Mode::Optimize, a),
        Command::Opc(a) => (Mode::Opc, a),
        Command::Coverage(a) => (Mode::Coverage, a),
        Command::Regret(a) => (Mode::Regret, a),
    };
    match execute(expected_mode, args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Error::Infeasible { min_slack }) => {
            eprintln!(
                "error: empirical feasibility set is empty (smallest restoring slack {min_slack:.3e}); \
                 raise rho or enlarge the data"
            );
            ExitCode::from(2)
        }
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(1)
        }
    }
}

fn execute(expected_mode: Mode, args: &RunArgs) -> weak_bellman::Result<()> {
    let text = std::fs::read_to_string(&args.config)?;
    let base = args
        .config
        .parent()
        .map(|p| p.to_path_buf())
        .unwrap_or_else(|| PathBuf::from("."));
    let mut config = ExperimentConfig::parse(&text, &base)?;
    if config.mode != expected_mode {
        return Err(Error::invalid(format!(
            "config declares mode `{}` but the `{}` subcommand was invoked",
            config.mode.as_str(),
            expected_mode.as_str()
        )));
    }
    if let Some(k) = args.seeds {
        if k == 0 {
            return Err(Error::invalid("--seeds must be positive"));
        }
        let base_seed = config.seeds.first().copied().unwrap_or(0);
        config.seeds = (0..k).map(|i| base_seed + i).collect();
    }
    if let Some(jobs) = args.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    }
    let out = harness::run(&config)?;
    harness::write_output(&out, &args.out)?;
    println!("wrote {}", args.out.join("records.csv").display());
    println!("wrote {}", args.out.join("summary.json").display());
    Ok(())
}
