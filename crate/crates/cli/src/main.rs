//! `probesched`: threshold tables, simulations, theory curves and sweeps
//! for joint channel probing and proportional-fair scheduling.
//!
//! Exit codes: 0 success, 2 usage or config error, 3 I/O error,
//! 4 computation error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde::Serialize;
use serde_json::Value;

use crate::commands::Command;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Io(String),
    Compute(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Io(_) => 3,
            CliError::Compute(_) => 4,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage: {m}"),
            CliError::Io(m) => write!(f, "I/O: {m}"),
            CliError::Compute(m) => write!(f, "computation failed: {m}"),
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "probesched",
    version,
    about = "Joint channel probing and proportional-fair scheduling"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    /// JSON experiment config, or the manifest.json of an earlier run.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Built-in config (fig3 ... fig8).
    #[arg(long, global = true, value_name = "NAME")]
    preset: Option<String>,
    /// Overrides the config's seed.
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    out: PathBuf,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Cmd {
    /// Static stopping thresholds v_j and the steady-state kappa.
    Thresholds,
    /// Run every configured policy; per-policy CSVs and summary.json.
    Simulate,
    /// Steady-state theory: theory.json, probe_probs.csv, gain_curves.csv.
    Theory,
    /// Run every configured policy at each value of the config's sweep.
    Sweep,
}

impl From<Cmd> for Command {
    fn from(c: Cmd) -> Self {
        match c {
            Cmd::Thresholds => Command::Thresholds,
            Cmd::Simulate => Command::Simulate,
            Cmd::Theory => Command::Theory,
            Cmd::Sweep => Command::Sweep,
        }
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'a str,
    version: &'a str,
    command: &'a str,
    preset: Option<&'a str>,
    config_hash: String,
    seed: u64,
    threads: Option<usize>,
    /// Relative to the manifest's directory.
    outputs: Vec<String>,
    duration_secs: f64,
    config: Value,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let command = Command::from(cli.command);
    let loaded = config::load(cli.preset.as_deref(), cli.config.as_deref())?;
    if let Some(recorded) = &loaded.manifest_command {
        if recorded != command.name() {
            return Err(CliError::Usage(format!(
                "manifest was written by `{recorded}`, not `{}`",
                command.name()
            )));
        }
    }
    let mut cfg = loaded.config;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    if cli.threads == Some(0) {
        return Err(CliError::Usage("--threads must be at least 1".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Compute(format!("cannot start worker threads: {e}")))?;

    let start = Instant::now();
    let outputs = pool.install(|| commands::run(command, &cfg, &cli.out))?;
    let manifest = Manifest {
        tool: env!("CARGO_BIN_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        command: command.name(),
        preset: loaded.preset.as_deref(),
        config_hash: config::config_hash(&cfg),
        seed: cfg.seed,
        threads: cli.threads,
        outputs,
        duration_secs: start.elapsed().as_secs_f64(),
        config: config::canonical_json(&cfg),
    };
    let path = cli.out.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    std::fs::write(&path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    println!(
        "{}: wrote {} files to {} in {:.2}s",
        command.name(),
        manifest.outputs.len() + 1,
        cli.out.display(),
        manifest.duration_secs
    );
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("probesched: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
