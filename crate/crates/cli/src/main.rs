//! Command-line front end: `train`, `unlearn`, `attack`, `experiment`, and
//! `report` subcommands over a single TOML run configuration, with flag
//! overrides for seed, trials, tau, workers, and output directory.
//!
//! Exit codes: 0 on success (including attacks that end in a structured
//! failure — the failure is encoded in the report), 1 on usage or
//! configuration errors, 2 on I/O or data-format errors.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fedunlearn::error::{Error, Result};

use crate::config::RunConfig;

const PRESET_TABLE1: &str = include_str!("../presets/table1.toml");
const PRESET_TABLE2: &str = include_str!("../presets/table2.toml");
const PRESET_TABLE3: &str = include_str!("../presets/table3.toml");
const PRESET_FIG2: &str = include_str!("../presets/fig2.toml");

#[derive(Parser)]
#[command(
    name = "fedunlearn",
    version,
    about = "Federated unlearning simulator with a label-inference attack harness"
)]
struct Cli {
    /// TOML run configuration; missing keys take their documented defaults.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Built-in configuration: table1, table2, table3, or fig2.
    #[arg(long, global = true, value_name = "NAME")]
    preset: Option<String>,

    /// Override the base seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Override the trials per grid point.
    #[arg(long, global = true)]
    trials: Option<usize>,

    /// Override the threshold tau (sweep tau grids narrow to this value).
    #[arg(long, global = true)]
    tau: Option<f64>,

    /// Worker threads for parallel sections (default: all processors).
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Override the output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run federated training and save the history dump plus a summary.
    Train,
    /// Execute the configured unlearning request and save the outcome dump.
    Unlearn,
    /// Run the label-inference attack and write the canonical JSON report.
    Attack,
    /// Run the configured experiment grid and write CSV/JSONL results.
    Experiment,
    /// Pretty-print the results.csv in the output directory.
    Report,
}

fn preset(name: &str) -> Result<&'static str> {
    match name {
        "table1" => Ok(PRESET_TABLE1),
        "table2" => Ok(PRESET_TABLE2),
        "table3" => Ok(PRESET_TABLE3),
        "fig2" => Ok(PRESET_FIG2),
        other => Err(Error::Config(format!(
            "unknown preset '{other}' (expected table1, table2, table3, or fig2)"
        ))),
    }
}

fn build_config(cli: &Cli) -> Result<RunConfig> {
    let mut config = match (&cli.config, &cli.preset) {
        (Some(_), Some(_)) => {
            return Err(Error::Config("--config and --preset are mutually exclusive".into()));
        }
        (Some(path), None) => RunConfig::load(path)?,
        (None, Some(name)) => RunConfig::from_toml_str(preset(name)?)?,
        (None, None) => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(trials) = cli.trials {
        config.trials = trials;
    }
    if let Some(tau) = cli.tau {
        config.attack.tau = tau;
        config.sweep.taus = vec![tau];
    }
    if let Some(out) = &cli.out {
        config.out = out.clone();
    }
    Ok(config)
}

fn run(cli: &Cli) -> Result<()> {
    if let Some(workers) = cli.workers {
        if workers == 0 {
            return Err(Error::Config("--workers must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build_global()
            .map_err(|e| Error::Config(format!("cannot size the worker pool: {e}")))?;
    }
    let config = build_config(cli)?;
    match cli.command {
        Command::Train => commands::cmd_train(&config),
        Command::Unlearn => commands::cmd_unlearn(&config),
        Command::Attack => commands::cmd_attack(&config),
        Command::Experiment => commands::cmd_experiment(&config),
        Command::Report => commands::cmd_report(&config),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0u8,
                _ => 1u8,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Config(_) => 1u8,
                _ => 2u8,
            })
        }
    }
}
