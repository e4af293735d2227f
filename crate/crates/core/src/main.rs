use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use pass_noma::ao::{ao_optimize, SicMode};
use pass_noma::geometry::{sample_users, SystemLayout};
use pass_noma::harness::experiment::WORKERS_ENV;
use pass_noma::harness::{emit_outputs, run_experiment, ExperimentConfig, ExperimentKind};
use pass_noma::noma::QosParams;
use pass_noma::oracle::{grid_alpha_oracle, random_p_oracle};

#[derive(Parser)]
#[command(name = "pass-noma-opt", version, about = "Pinching-antenna NOMA sum-rate optimization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a Monte Carlo experiment and write CSV and SVG outputs.
    Run(RunArgs),
    /// Brute-force reference solvers for small instances.
    #[command(subcommand)]
    Oracle(OracleCommand),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// vary-antennas, vary-users, sic-compare or single.
    #[arg(long)]
    experiment: Option<ExperimentKind>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Dotted `section.key=value`; repeatable, applied in order.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum OracleCommand {
    /// Grid search over power splits for fixed effective gains.
    Alpha {
        /// Comma-separated effective gains |h^T p|^2.
        #[arg(long, value_delimiter = ',', required = true)]
        gains: Vec<f64>,
        #[arg(long, default_value_t = 0.5)]
        r_min: f64,
        #[arg(long, default_value_t = 1e-12)]
        noise: f64,
        #[arg(long, default_value_t = 1e-3)]
        resolution: f64,
    },
    /// Random-search radiation vectors on one trial of a config, next to the optimizer.
    RandomP {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        trial: usize,
        #[arg(long, default_value_t = 1_000_000)]
        samples: usize,
        #[arg(long, default_value_t = 1)]
        oracle_seed: u64,
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
}

fn run(args: RunArgs) -> Result<()> {
    let mut cfg = ExperimentConfig::load(&args.config, &args.overrides)?;
    if let Some(kind) = args.experiment {
        cfg.experiment.kind = kind;
    }
    if let Some(trials) = args.trials {
        cfg.experiment.trials = trials;
    }
    if let Some(seed) = args.seed {
        cfg.experiment.seed = seed;
    }
    if let Some(out) = args.out {
        cfg.output.dir = out;
    }
    cfg.validate()?;
    info!("workers from {WORKERS_ENV} (unset: one per core)");
    let output = run_experiment(&cfg)?;
    for row in &output.summary {
        println!(
            "{:>4} {:<15} mean {:.4} ± {:.4}  feasible {}/{}{}",
            row.sweep_value,
            row.scheme.label(),
            row.mean_sum_rate,
            row.std_error,
            row.feasible,
            row.trials,
            row.gpr_relative_gain.map(|g| format!("  gpr gain {:+.2}%", 100.0 * g)).unwrap_or_default()
        );
    }
    for path in emit_outputs(&output, cfg.experiment.kind, &cfg.output.dir, cfg.output.plot)? {
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn oracle(cmd: OracleCommand) -> Result<()> {
    match cmd {
        OracleCommand::Alpha { gains, r_min, noise, resolution } => {
            let qos = QosParams::uniform(gains.len(), r_min)?;
            let out = grid_alpha_oracle(&gains, &qos, noise, resolution)?;
            match out.alpha {
                Some(alpha) => println!("sum rate {:.6}  alpha {:?}", out.sum_rate, alpha),
                None => println!("infeasible at resolution {resolution}"),
            }
        }
        OracleCommand::RandomP { config, trial, samples, oracle_seed, overrides } => {
            let cfg = ExperimentConfig::load(&config, &overrides)?;
            let p = &cfg.physics;
            let (n, k) = (cfg.experiment.n_antennas, cfg.experiment.n_users);
            let layout = SystemLayout::new(&cfg.layout_params(n))?;
            let users = sample_users(k, p.d1_m, p.d2_m, cfg.experiment.seed.wrapping_add(trial as u64))?;
            let channels = layout.channels(&users, cfg.noise_variance())?;
            let qos = QosParams::uniform(k, p.r_min)?;
            let best = random_p_oracle(&channels, &qos, p.power_budget_w, p.budget_reading, samples, oracle_seed)?;
            let ao = ao_optimize(&channels, &qos, p.power_budget_w, &cfg.ao_config(SicMode::Dynamic))?;
            println!("random-p  sum rate {:.6}  feasible samples {}/{}", best.sum_rate, best.feasible_samples, samples);
            println!("optimizer sum rate {:.6}  status {:?}", ao.sum_rate, ao.status);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => run(args).context("run failed"),
        Command::Oracle(cmd) => oracle(cmd).context("oracle failed"),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
