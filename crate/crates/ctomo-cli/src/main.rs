//! `ctomo`: run tomosynthesis scenarios from the command line.
//!
//! Exit codes: 0 success, 2 configuration or usage error, 3 runtime stage
//! error.

use clap::{Parser, Subcommand};
use ctomo::scenario::{run_scenario, RunOptions, ScenarioError, Stage};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "ctomo",
    version,
    about = "Simulate limited-angle C-arm projections and reconstruct volumes"
)]
struct Cli {
    /// Scenario configuration file (TOML)
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Directory for artifacts (created if absent)
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    out_dir: PathBuf,

    /// Override the config's noise seed
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (default: all cores); results are identical at any value
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Override the view count, keeping the angular span
    #[arg(long, global = true)]
    views: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Project the phantom analytically and voxelize the ground truth
    Simulate,
    /// Forward-project the ground truth with the ray-driven model
    Project,
    /// Run the configured reconstruction algorithms
    Reconstruct,
    /// Emit profile/MTF/ASF CSVs for each reconstruction
    Metrics,
    /// Render PGM slices of the truth and each reconstruction
    Export,
    /// All of the above, in order
    All,
}

impl From<Command> for Stage {
    fn from(c: Command) -> Stage {
        match c {
            Command::Simulate => Stage::Simulate,
            Command::Project => Stage::Project,
            Command::Reconstruct => Stage::Reconstruct,
            Command::Metrics => Stage::Metrics,
            Command::Export => Stage::Export,
            Command::All => Stage::All,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            eprintln!("error: cannot configure {threads} threads: {e}");
            return ExitCode::from(3);
        }
    }
    let Some(config) = cli.config else {
        eprintln!("error: --config <FILE> is required");
        return ExitCode::from(2);
    };
    let opts = RunOptions { seed: cli.seed, views: cli.views };
    match run_scenario(&config, &cli.out_dir, cli.command.into(), &opts) {
        Ok(()) => {
            println!("artifacts written to {}", cli.out_dir.display());
            ExitCode::SUCCESS
        }
        Err(e @ (ScenarioError::Config(_) | ScenarioError::ConfigIo(_))) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(3)
        }
    }
}
