use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use erl_harness::{emit_outputs, run, ExperimentConfig, ExperimentKind, HarnessError, Overrides};

#[derive(Parser)]
#[command(
    name = "erl",
    version,
    about = "Entropy-regularized RL experiments: solve, shape, compose, transfer"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Soft value iteration on one task.
    Solve(Args),
    /// Shaped vs. unshaped convergence.
    Shape(Args),
    /// Corrective vs. direct convergence for a composed task.
    Compose(Args),
    /// Transfer across a change of dynamics.
    Dynamics(Args),
    /// Inverse-reward round trip.
    Invrl(Args),
    /// Identifiability residual for two environments and potentials.
    Identify(Args),
    /// Shaping sweeps over maze size and wall height.
    Bench(Args),
}

#[derive(clap::Args)]
struct Args {
    /// JSON experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Maze size.
    #[arg(long)]
    size: Option<usize>,
    /// Slip probability.
    #[arg(long)]
    slip: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    /// Also write convergence.svg.
    #[arg(long)]
    svg: bool,
    /// Use the literal index placement for the identifiability condition.
    #[arg(long)]
    identifiability_literal: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, args) = match cli.command {
        Command::Solve(a) => (ExperimentKind::Solve, a),
        Command::Shape(a) => (ExperimentKind::ShapeCompare, a),
        Command::Compose(a) => (ExperimentKind::ComposeCompare, a),
        Command::Dynamics(a) => (ExperimentKind::DynamicsTransfer, a),
        Command::Invrl(a) => (ExperimentKind::InverseRl, a),
        Command::Identify(a) => (ExperimentKind::Identifiability, a),
        Command::Bench(a) => (ExperimentKind::Bench, a),
    };
    match execute(kind, args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn execute(kind: ExperimentKind, args: Args) -> Result<(), HarnessError> {
    let overrides = Overrides {
        out: args.out,
        seed: args.seed,
        size: args.size,
        slip: args.slip,
        beta: args.beta,
        gamma: args.gamma,
        svg: args.svg,
        identifiability_literal: args.identifiability_literal,
    };
    let config = ExperimentConfig::load(&args.config)?.resolve(kind, &overrides)?;
    let artifact = run(&config)?;
    for w in &artifact.warnings {
        eprintln!("warning: {w}");
    }
    let dir = config.output_dir();
    emit_outputs(&artifact, &dir, config.svg)?;
    for c in &artifact.checks {
        println!(
            "check {:<28} residual {:.3e} (tol {:.0e})",
            c.name, c.residual, c.tolerance
        );
    }
    for row in &artifact.thresholds {
        let it = row.iterations.map_or("NA".to_string(), |k| k.to_string());
        println!("{:<24} threshold {:.0e}: {it}", row.label, row.threshold);
    }
    for (key, value) in &artifact.details {
        println!("{key}: {value}");
    }
    println!("wrote {}", dir.display());
    Ok(())
}
