use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};

use cellhom::config::{Command, RunConfig};
use cellhom::run::{execute, Exit, VERSION};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Cmd {
    /// One cell solve.
    Cell,
    /// Sweep over truncation levels, cell sizes and meshes.
    Homogenize,
    /// Recovery-sequence experiment.
    Recover,
    /// Property or acceptance suite.
    Check,
}

impl From<Cmd> for Command {
    fn from(c: Cmd) -> Self {
        match c {
            Cmd::Cell => Command::Cell,
            Cmd::Homogenize => Command::Homogenize,
            Cmd::Recover => Command::Recover,
            Cmd::Check => Command::Check,
        }
    }
}

/// Numerical homogenization of incompressible periodic composites.
///
/// Exit status: 0 success, 1 failed check, 2 non-convergence in strict
/// mode, 3 configuration or I/O error.
#[derive(Debug, Parser)]
#[command(name = "cellhom", version)]
struct Cli {
    #[arg(value_enum)]
    command: Cmd,
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Report directory (overrides `output`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides `seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `threads` (0 = all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Accept det F ≠ 1 (penalty solves only).
    #[arg(long)]
    allow_off_sigma: bool,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { Exit::Error.code() as u8 } else { 0 });
        }
    };
    let exit = match run(&cli) {
        Ok(exit) => exit,
        Err(e) => {
            eprintln!("cellhom: {e}");
            Exit::Error
        }
    };
    ExitCode::from(exit.code() as u8)
}

fn run(cli: &Cli) -> cellhom::Result<Exit> {
    let mut config = RunConfig::load(&cli.config)?;
    config.allow_off_sigma |= cli.allow_off_sigma;
    if let Some(out) = &cli.out {
        config.output = Some(out.clone());
    }
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(threads) = cli.threads {
        config.threads = threads;
    }
    config.validate()?;
    println!("{VERSION}: {}", Command::from(cli.command));
    let outcome = execute(&config, cli.command.into())?;
    for line in &outcome.summary {
        println!("{line}");
    }
    for file in &outcome.files {
        println!("wrote {}", file.display());
    }
    Ok(outcome.exit)
}
