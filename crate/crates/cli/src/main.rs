//! `gfgl`: fit, simulate, evaluate and sweep the group-fused graphical lasso.

mod commands;
mod io;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{EvaluateArgs, FitArgs, PathArgs, SimulateArgs};

#[derive(Debug, Parser)]
#[command(name = "gfgl", version, about = "Group-fused graphical lasso: changepoints and sparse precision matrices")]
struct Cli {
    /// Worker threads for the per-time sweeps (default: all cores). 1 runs
    /// the sequential reference mode; results are identical either way.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Estimate changepoints and block precisions from a CSV series.
    Fit(FitArgs),
    /// Draw a piecewise-constant Gaussian series and its ground truth.
    Simulate(SimulateArgs),
    /// Score a fit against a simulated ground truth.
    Evaluate(EvaluateArgs),
    /// Sweep λ2 with warm starts and optionally pick a changepoint count.
    Path(PathArgs),
}

fn run(cli: &Cli) -> io::CliResult<()> {
    let parallel = match cli.threads {
        Some(0) => return Err(io::CliError::Input("threads must be at least 1".into())),
        Some(n) => {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| io::CliError::Input(e.to_string()))?;
            n > 1
        }
        None => true,
    };
    match &cli.command {
        Command::Fit(a) => commands::fit(a, parallel),
        Command::Simulate(a) => commands::simulate(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Path(a) => commands::path(a, parallel),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code())
        }
    }
}
