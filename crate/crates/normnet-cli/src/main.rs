//! `normnet` command line.
//!
//! Exit codes: 0 success, 1 runtime failure (I/O, training), 2 config or
//! usage error, 3 budget infeasible, 4 certificate violation, 5 oracle
//! inconsistency.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use config::{Command, RunConfig};

#[derive(Parser)]
#[command(name = "normnet", about = "Compile, verify and sweep norm-certified ReLU networks")]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    /// TOML run configuration; command-line flags override its entries.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    flags: RunConfig,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let base = match &cli.config {
        Some(p) => match RunConfig::load(&config::resolve(p), cli.command) {
            Ok(c) => c,
            Err(m) => {
                eprintln!("error: {m}");
                return ExitCode::from(2);
            }
        },
        None => RunConfig::default(),
    };
    let cfg = base.overlay(cli.flags);
    match commands::run(cli.command, &cfg) {
        Ok(()) => {
            println!("{}: ok ({})", cli.command.name(), cfg.output_dir(cli.command).display());
            ExitCode::SUCCESS
        }
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code() as u8)
        }
    }
}
