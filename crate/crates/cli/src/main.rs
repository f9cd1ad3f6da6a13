use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use igo_cli::config::Command;
use igo_cli::{load_config, replay, run, Overrides};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Action {
    Simulate,
    Train,
    Sample,
    Gpca,
    Csgm,
    Sweep,
    Probe,
    Metrics,
    Replay,
}

/// Seeded experiment driver for intermediate generator optimization.
#[derive(Debug, Parser)]
#[command(name = "igo", version)]
struct Cli {
    command: Action,
    /// TOML configuration, or a resolved configuration for `replay`.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the root seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the output directory.
    #[arg(long)]
    out: Option<String>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let overrides = Overrides {
        seed: cli.seed,
        out: cli.out,
    };
    let command = match cli.command {
        Action::Simulate => Some(Command::Simulate),
        Action::Train => Some(Command::Train),
        Action::Sample => Some(Command::Sample),
        Action::Gpca => Some(Command::Gpca),
        Action::Csgm => Some(Command::Csgm),
        Action::Sweep => Some(Command::Sweep),
        Action::Probe => Some(Command::Probe),
        Action::Metrics => Some(Command::Metrics),
        Action::Replay => None,
    };
    let result = match command {
        None => replay(&cli.config, &overrides),
        Some(c) => load_config(&cli.config).and_then(|cfg| run(cfg, c, &overrides)),
    };
    match result {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("igo: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
