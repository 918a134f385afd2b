//! Experiment harness around the `ftpedel` library.
//!
//! Subcommands: `gen` (instances and offline datasets), `eval` (coverage
//! diagnostics for an instance/dataset pair), `run` (algorithms across
//! seeds, records CSV), `report` (aggregation into summary CSV and
//! plot-data JSON). Every command takes an optional `--config <file.json>`
//! whose keys mirror the flags; flags win over config values, and unknown
//! config keys are rejected.
//!
//! Exit codes: 0 success, 2 validation or I/O failure, 3 an episode budget
//! was exhausted, 4 a coverage requirement is unsatisfiable.

mod common;
mod eval;
mod gen;
mod report;
mod run;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "ftpedel", version, about = "Offline-to-online RL experiment harness")]
struct Cli {
    #[command(subcommand)]
    command: Commands,
}

#[derive(Subcommand)]
enum Commands {
    /// Generate an instance file or an offline dataset.
    #[command(subcommand)]
    Gen(gen::GenCommands),
    /// Coverage diagnostics: concentrability, transfer coefficients,
    /// online top-ups, and verifiability margins.
    Eval(eval::EvalArgs),
    /// Run an algorithm across seeds and write a records CSV.
    Run(run::RunArgs),
    /// Aggregate records CSVs into a summary CSV and plot-data JSON.
    Report(report::ReportArgs),
}

fn main() -> ExitCode {
    init_workers();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Commands::Gen(cmd) => gen::execute(cmd).map(|()| 0),
        Commands::Eval(args) => eval::execute(args).map(|()| 0),
        Commands::Run(args) => run::execute(args),
        Commands::Report(args) => report::execute(args).map(|()| 0),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(classify(&err))
        }
    }
}

/// Size the global worker pool from `FTPEDEL_WORKERS` when set. Seeds are
/// pure and independent, so any pool size yields the same records.
fn init_workers() {
    if let Ok(raw) = std::env::var("FTPEDEL_WORKERS") {
        match raw.parse::<usize>() {
            Ok(n) if n >= 1 => {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            _ => eprintln!("warning: ignoring FTPEDEL_WORKERS={raw:?} (want a positive integer)"),
        }
    }
}

fn classify(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<ftpedel::Error>() {
            return match e {
                ftpedel::Error::BudgetExhausted { .. } => 3,
                ftpedel::Error::Unsatisfiable(_) => 4,
                _ => 2,
            };
        }
    }
    2
}
