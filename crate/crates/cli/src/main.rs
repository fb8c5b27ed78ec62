//! Command-line front end: problem specs in, trajectories and Monte Carlo
//! reports out.
//!
//! Exit codes: 0 success, 1 parse/validation/numerical failure,
//! 2 no fixed point, 3 infinitely many solutions, 4 missing analytic
//! capability, 5 statistical rejection.

mod commands;
mod spec;

use clap::{Parser, Subcommand};
use commands::StatRejection;
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "jumpbvp",
    about = "Pathwise solvers and Monte Carlo checks for jump-driven boundary problems",
    version
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Solve one path of the problem and print the trajectory as JSON.
    Solve {
        #[arg(long)]
        spec: PathBuf,
        /// Inline jump path as a JSON array, e.g. "[0.3, 0.7]".
        #[arg(long)]
        path: Option<String>,
        /// Sample the path from this seed instead (stream 0).
        #[arg(long)]
        path_seed: Option<u64>,
        /// Uniform sample points in the emitted trajectory.
        #[arg(long, default_value_t = 101)]
        grid: usize,
    },
    /// Estimate the law of X_t by Monte Carlo; emits summary JSON and
    /// optionally per-sample CSV.
    Law {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        t: f64,
        #[arg(long)]
        paths: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        workers: Option<usize>,
        /// Directory for samples.csv and summary.json.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare analytic jump-time sensitivities against the re-solve
    /// finite-difference oracle.
    Sensitivity {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        paths: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Conditional-independence and structural checks for the linear
    /// reciprocal cases (1..=5).
    Reciprocal {
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        case: u8,
        #[arg(long)]
        paths: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Truncated chaos expansion of the absorbing linear problem against
    /// its pathwise solution.
    Chaos {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        t: f64,
        #[arg(long, default_value_t = 30)]
        order: u32,
        #[arg(long, default_value_t = 1000)]
        n_omegas: u64,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Solve one anticipating path (spec kind must be "skorohod").
    Skorohod {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        path: Option<String>,
        #[arg(long)]
        path_seed: Option<u64>,
        #[arg(long, default_value_t = 101)]
        grid: usize,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.cmd {
        Cmd::Solve {
            spec,
            path,
            path_seed,
            grid,
        } => commands::cmd_solve(&spec, path.as_deref(), path_seed, grid)?,
        Cmd::Law {
            spec,
            t,
            paths,
            seed,
            workers,
            out,
        } => commands::cmd_law(&spec, t, paths, seed, workers, out.as_ref())?,
        Cmd::Sensitivity {
            spec,
            paths,
            seed,
            out,
        } => commands::cmd_sensitivity(&spec, paths, seed, out.as_ref())?,
        Cmd::Reciprocal {
            spec,
            case,
            paths,
            seed,
        } => commands::cmd_reciprocal(spec.as_ref(), case, paths, seed)?,
        Cmd::Chaos {
            spec,
            t,
            order,
            n_omegas,
            seed,
        } => commands::cmd_chaos(&spec, t, order, n_omegas, seed)?,
        Cmd::Skorohod {
            spec,
            path,
            path_seed,
            grid,
        } => commands::cmd_skorohod(&spec, path.as_deref(), path_seed, grid)?,
    };
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> i32 {
    if err.downcast_ref::<StatRejection>().is_some() {
        return 5;
    }
    match err.downcast_ref::<jumpbvp::Error>() {
        Some(jumpbvp::Error::NoFixedPoint { .. }) => 2,
        Some(jumpbvp::Error::MultipleSolutions { .. }) => 3,
        Some(jumpbvp::Error::MissingCapability(_)) => 4,
        _ => 1,
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(err) = run(cli) {
        eprintln!("error: {err:#}");
        std::process::exit(exit_code(&err));
    }
}
