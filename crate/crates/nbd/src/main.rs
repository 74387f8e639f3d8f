use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use nbd::{Rayon, Subcommand};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Command {
    Solve,
    Evolve,
    Spectrum,
    Decay,
    McCompare,
    Check,
}

impl From<Command> for Subcommand {
    fn from(c: Command) -> Self {
        match c {
            Command::Solve => Subcommand::Solve,
            Command::Evolve => Subcommand::Evolve,
            Command::Spectrum => Subcommand::Spectrum,
            Command::Decay => Subcommand::Decay,
            Command::McCompare => Subcommand::McCompare,
            Command::Check => Subcommand::Check,
        }
    }
}

/// Run a nonlocal boundary diffusion scenario.
#[derive(Debug, Parser)]
#[command(name = "nbd", version)]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    /// Scenario JSON file.
    #[arg(long)]
    config: PathBuf,
    /// Override a config value, e.g. `--set domain.resolution=64`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let threads = match nbd::exec::threads_from_env() {
        Ok(t) => t,
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(1);
        }
    };
    let config = match nbd::load(&cli.config, &cli.overrides) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    let exec = Rayon::new(threads);
    match nbd::run(cli.command.into(), config, &cli.out_dir, &exec) {
        Ok(outcome) => {
            println!("{}", serde_json::to_string(&outcome.results).unwrap_or_default());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
