//! Command line front end.
//!
//! Exit codes: 0 success, 1 a stage check failed or a run error occurred,
//! 2 the configuration could not be parsed or is invalid.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use junction_hjb::pipeline::{load_config, run, RunOptions, Task};

const THREADS_ENV: &str = "JUNCTION_HJB_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "junction-hjb",
    version,
    about = "Optimal control on a junction of half-planes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve and export the value field.
    Solve(Common),
    /// Solve and run the verification checks.
    Verify(Common),
    /// Solve and compare against the closed form and/or brute force.
    Compare(Common),
    /// Simulate the configured trajectories.
    Simulate(Common),
    /// Run the pipeline listed in the configuration.
    Run(Common),
}

#[derive(Debug, Args)]
struct Common {
    /// Configuration file, or the name of a built-in configuration.
    config: String,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker threads; overrides the JUNCTION_HJB_THREADS environment variable.
    #[arg(long)]
    threads: Option<usize>,
    /// Seed for the brute-force enumeration order.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn threads(flag: Option<usize>) -> Result<Option<usize>, String> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| format!("{THREADS_ENV}={v:?} is not a thread count")),
        Err(_) => Ok(None),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let (task, common) = match cli.command {
        Command::Solve(c) => (Task::Solve, c),
        Command::Verify(c) => (Task::Verify, c),
        Command::Compare(c) => (Task::Compare, c),
        Command::Simulate(c) => (Task::Simulate, c),
        Command::Run(c) => (Task::Run, c),
    };
    let n_threads = match threads(common.threads) {
        Ok(n) => n,
        Err(e) => {
            log::error!("{e}");
            return ExitCode::from(2);
        }
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = n_threads {
        pool = pool.num_threads(n);
    }
    if let Err(e) = pool.build_global() {
        log::error!("cannot start thread pool: {e}");
        return ExitCode::from(1);
    }
    let config = match load_config(&common.config) {
        Ok(c) => c,
        Err(e) => {
            log::error!("{}: {e}", common.config);
            return ExitCode::from(2);
        }
    };
    let opts = RunOptions {
        out_dir: common.out,
        seed: common.seed,
        task,
    };
    match run(&config, &opts) {
        Ok(summary) => {
            for f in &summary.failures {
                log::error!("FAILED {f}");
            }
            log::info!("wrote {} to {}", summary.artifacts.join(", "), opts.out_dir.display());
            ExitCode::from(summary.exit_code() as u8)
        }
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
