//! Command-line front end: reproducible spectra, sweeps, calibrations and
//! time-domain runs from flat configuration files.
//!
//! Exit codes: 0 success, 2 configuration error, 3 solver error,
//! 4 comparison failure.

mod compare;
mod config;
mod experiments;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "optomech", about = "Feedback-cooled electromechanics engine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a configuration file.
    Run {
        /// Configuration file (flat key = value with [section] headers).
        #[arg(long)]
        config: PathBuf,
        /// Output directory for artifacts and the manifest.
        #[arg(long)]
        out: PathBuf,
        /// Override the noise seed from the configuration.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the base frequency-grid point count.
        #[arg(long)]
        grid_points: Option<usize>,
        /// Suppress per-artifact progress lines.
        #[arg(long)]
        quiet: bool,
    },
    /// Compare two CSV artifacts column by column.
    Compare {
        a: PathBuf,
        b: PathBuf,
        /// Maximum allowed relative deviation per value.
        #[arg(long, default_value_t = 1e-10)]
        tol: f64,
        #[arg(long)]
        quiet: bool,
    },
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Run { config: path, out, seed, grid_points, quiet } => {
            let raw = match config::RawConfig::load(&path) {
                Ok(raw) => raw,
                Err(e) => {
                    eprintln!("config error: {e}");
                    return ExitCode::from(2);
                }
            };
            let mut cfg = match config::resolve(raw, seed) {
                Ok(cfg) => cfg,
                Err(e) => {
                    eprintln!("config error: {e}");
                    return ExitCode::from(2);
                }
            };
            cfg.grid_points = grid_points;
            match experiments::run(&cfg, &out, quiet) {
                Ok(()) => ExitCode::SUCCESS,
                Err(experiments::RunError::Config(m)) => {
                    eprintln!("config error: {m}");
                    ExitCode::from(2)
                }
                Err(experiments::RunError::Solver(m)) => {
                    eprintln!("solver error: {m}");
                    ExitCode::from(3)
                }
            }
        }
        Command::Compare { a, b, tol, quiet } => match compare::compare(&a, &b, tol) {
            Ok(compare::CompareOutcome::Within(reports)) => {
                if !quiet {
                    print_reports(&reports);
                    println!("within tolerance {tol:.3e}");
                }
                ExitCode::SUCCESS
            }
            Ok(compare::CompareOutcome::Beyond(reports)) => {
                print_reports(&reports);
                eprintln!("beyond tolerance {tol:.3e}");
                ExitCode::from(4)
            }
            Err(compare::CompareError::SchemaMismatch(m)) => {
                eprintln!("schema mismatch: {m}");
                ExitCode::from(4)
            }
            Err(compare::CompareError::Io(m)) => {
                eprintln!("config error: {m}");
                ExitCode::from(2)
            }
        },
    }
}

fn print_reports(reports: &[compare::ColumnReport]) {
    for r in reports {
        println!("{:<24} max {:.3e}  mean {:.3e}", r.name, r.max_rel, r.mean_rel);
    }
}
