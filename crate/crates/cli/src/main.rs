use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use distmeta_cli::{cmd_run, cmd_sweep, cmd_validate, exit_code, Overrides, OUT_ENV};

#[derive(Parser)]
#[command(version, about = "Distributed algorithms from centralized blocks and consensus trackers")]
struct Cli {
    /// Output directory (overrides the config and the environment root).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed for the problem generator and the random graph.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured experiment with its `delta`.
    Run { config: PathBuf },
    /// Run one trace per value in `deltas` plus the centralized reference.
    Sweep { config: PathBuf },
    /// Check the configuration without running it.
    Validate { config: PathBuf },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let overrides = Overrides {
        out: cli.out,
        seed: cli.seed,
        env_root: std::env::var_os(OUT_ENV).map(PathBuf::from),
    };
    let (result, config) = match &cli.command {
        Command::Run { config } => (cmd_run(config, &overrides), config),
        Command::Sweep { config } => (cmd_sweep(config, &overrides), config),
        Command::Validate { config } => (cmd_validate(config, &overrides), config),
    };
    match &result {
        Ok(_) => {
            if !matches!(cli.command, Command::Validate { .. }) {
                if let Some(dir) = distmeta_cli::commands::resolved_output_dir(config, &overrides) {
                    println!("outputs in {}", dir.display());
                }
            }
        }
        Err(e) => eprintln!("error: {e}"),
    }
    ExitCode::from(exit_code(&result))
}
