//! `cmc`: simulate marked paths, analyze delay laws, check conditions,
//! optimize thresholds and merge summaries.

mod commands;
mod config;
mod error;
mod inputs;
mod output;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::error::{CliError, CliResult};

#[derive(Parser, Debug)]
#[command(name = "cmc", version, about = "Congestion marking clock toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the packet-level simulator on a scenario file.
    Simulate(commands::SimulateArgs),
    /// Propagate hop laws, optimize the threshold and report the error.
    Analyze(commands::AnalyzeArgs),
    /// Evaluate the sufficient conditions at given thresholds.
    Check(commands::CheckArgs),
    /// Sweep thresholds and level counts and suggest a byte threshold.
    Optimize(commands::OptimizeArgs),
    /// Merge summary.json files into one CSV table.
    Report(commands::ReportArgs),
}

/// `CMC_THREADS` sizes the worker pool.
fn init_threads() -> CliResult<()> {
    let Ok(v) = std::env::var("CMC_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .map_err(|_| CliError::Usage(format!("CMC_THREADS=`{v}` is not a thread count")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(format!("CMC_THREADS: {e}")))
}

fn run(cli: &Cli) -> CliResult<()> {
    init_threads()?;
    match &cli.command {
        Command::Simulate(a) => commands::simulate(a),
        Command::Analyze(a) => commands::analyze(a),
        Command::Check(a) => commands::check(a),
        Command::Optimize(a) => commands::optimize(a),
        Command::Report(a) => commands::report(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
