use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};

use borelq::cli::{execute, Command};

#[derive(Clone, Copy, ValueEnum)]
enum Cmd {
    Verify,
    Sweep,
    Limits,
    Spectrum,
    Bethe,
}

#[derive(Parser)]
#[command(name = "borelq", about = "Transfer matrix and Q-operator checks for the XXZ chain")]
struct Args {
    #[arg(value_enum)]
    command: Cmd,
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// `key=value`, applied after the config file; repeatable.
    #[arg(long = "override")]
    overrides: Vec<String>,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let command = match args.command {
        Cmd::Verify => Command::Verify,
        Cmd::Sweep => Command::Sweep,
        Cmd::Limits => Command::Limits,
        Cmd::Spectrum => Command::Spectrum,
        Cmd::Bethe => Command::Bethe,
    };
    match execute(command, &args.config, &args.out, &args.overrides) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
