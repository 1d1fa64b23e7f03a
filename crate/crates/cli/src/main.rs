//! `drmean` command-line tool.
//!
//! Exit codes: 0 success, 1 a check failed, 2 configuration error, 3 data
//! error, 4 every estimator failed.

mod commands;
mod config;
mod data;
mod table;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::LoadedConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) | CliError::Io(_) => 3,
        }
    }
}

#[derive(Parser)]
#[command(name = "drmean", version, about = "Mean estimation with outcomes missing at random")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate the mean from a data file.
    Estimate(Common),
    /// Run a Monte Carlo study.
    Simulate(Common),
    /// Check algebraic identities on data or one simulated dataset.
    Check(Common),
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output file; defaults to [output] path, then stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the master seed of [simulate].
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for replicates.
    #[arg(long)]
    jobs: Option<usize>,
}

fn run(cli: Cli) -> Result<u8, CliError> {
    let (common, which) = match &cli.command {
        Command::Estimate(c) => (c, "estimate"),
        Command::Simulate(c) => (c, "simulate"),
        Command::Check(c) => (c, "check"),
    };
    let loaded = LoadedConfig::load(&common.config)?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(j) = common.jobs {
        if j == 0 {
            return Err(CliError::Config("--jobs must be at least 1".into()));
        }
        pool = pool.num_threads(j);
    }
    let pool = pool.build().map_err(|e| CliError::Config(e.to_string()))?;
    let report = pool.install(|| match which {
        "estimate" => commands::estimate(&loaded),
        "simulate" => commands::simulate(&loaded, common.seed),
        _ => commands::check(&loaded, common.seed),
    })?;

    let format = loaded.config.output.format;
    let target = common
        .out
        .clone()
        .or_else(|| loaded.config.output.path.as_ref().map(|p| loaded.resolve(p)));
    match target {
        Some(path) => {
            let file = File::create(&path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
            let mut w = BufWriter::new(file);
            report.table.write(&mut w, format)?;
            w.flush().map_err(|e| CliError::Io(e.to_string()))?;
        }
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            report.table.write(&mut lock, format)?;
        }
    }
    if report.code == 4 {
        eprintln!("every estimator failed; known estimators: {}", commands::registry());
    }
    Ok(report.code as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("drmean: {e}");
            ExitCode::from(e.code())
        }
    }
}
