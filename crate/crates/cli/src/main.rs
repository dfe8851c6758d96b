use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod config;
mod error;
mod report;
mod run;

use config::{ExperimentConfig, Mode, EXAMPLE_CONFIG};
use error::CliError;
use run::Overrides;

/// Optimal control and policy learning for input-delay systems with multiplicative noise.
#[derive(Parser, Debug)]
#[command(name = "delaylqr", version)]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Optimal gain and value stack by model-based policy iteration.
    Solve(Common),
    /// Learn the optimal gain from simulated rollouts.
    Learn(Common),
    /// Simulate closed-loop rollouts and write trajectories.
    Simulate(Common),
    /// Mean-square stability test of a gain.
    CheckStability(Common),
    /// Solve and learn on the bundled two-state example.
    #[command(alias = "paper-example")]
    Example(Common),
}

#[derive(Args, Debug)]
struct Common {
    /// Experiment configuration (TOML). Optional for `example`.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    rollouts: Option<usize>,
    /// Convergence tolerance of the mode's iteration.
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    exploration_variance: Option<f64>,
    /// Reuse the first rollout batch in every learning iteration.
    #[arg(long)]
    single_batch: bool,
    /// Print the effective configuration as TOML and exit.
    #[arg(long)]
    print_config: bool,
}

fn load(mode: Mode, args: &Common) -> Result<ExperimentConfig, CliError> {
    let text = match &args.config {
        Some(path) => std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?,
        None if mode == Mode::Example => EXAMPLE_CONFIG.to_string(),
        None => return Err(CliError::field("--config", "required for this subcommand")),
    };
    let mut cfg = ExperimentConfig::parse(&text)?;
    if let Some(m) = cfg.mode.filter(|m| *m != mode) {
        log::info!("config mode '{}' replaced by subcommand '{}'", m.name(), mode.name());
    }
    Overrides {
        seed: args.seed,
        out: args.out.clone(),
        rollouts: args.rollouts,
        tol: args.tol,
        max_iter: args.max_iter,
        horizon: args.horizon,
        exploration_variance: args.exploration_variance,
        single_batch: args.single_batch,
    }
    .apply(mode, &mut cfg);
    Ok(cfg)
}

fn execute(mode: Mode, args: &Common) -> Result<(), CliError> {
    let cfg = load(mode, args)?;
    if args.print_config {
        print!("{}", cfg.to_toml());
        return Ok(());
    }
    let summary = run::run(mode, &cfg)?;
    println!("{}", serde_json::to_string(&summary["metrics"]).expect("json value serializes"));
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let (mode, args) = match &cli.command {
        Command::Solve(a) => (Mode::Solve, a),
        Command::Learn(a) => (Mode::Learn, a),
        Command::Simulate(a) => (Mode::Simulate, a),
        Command::CheckStability(a) => (Mode::CheckStability, a),
        Command::Example(a) => (Mode::Example, a),
    };
    match execute(mode, args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.line());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
