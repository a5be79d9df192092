use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use prefpath::io::{load_config, run, Mode};

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Command {
    Solve,
    Optimize,
    SweepAlpha,
    OracleW2,
}

impl From<Command> for Mode {
    fn from(c: Command) -> Mode {
        match c {
            Command::Solve => Mode::Solve,
            Command::Optimize => Mode::Optimize,
            Command::SweepAlpha => Mode::SweepAlpha,
            Command::OracleW2 => Mode::OracleW2,
        }
    }
}

/// Optimal transport with a preferential path.
#[derive(Debug, Parser)]
#[command(version)]
struct Cli {
    /// What to run; overrides the `mode` in the configuration.
    #[arg(value_enum)]
    mode: Command,
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (default: `out` in the configuration, else `./out`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Suppress progress messages.
    #[arg(long)]
    quiet: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = load_config(&cli.config).and_then(|mut config| {
        config.mode = cli.mode.into();
        let out = cli
            .out
            .clone()
            .or_else(|| config.out.clone())
            .unwrap_or_else(|| PathBuf::from("out"));
        let quiet = cli.quiet;
        run(&config, &out, |line| {
            if !quiet {
                eprintln!("{line}");
            }
        })
        .map(|summary| (summary, out))
    });
    match result {
        Ok((summary, out)) => {
            if !cli.quiet {
                eprintln!("wrote {} output to {}", summary.mode.name(), out.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.class().exit_code() as u8)
        }
    }
}
