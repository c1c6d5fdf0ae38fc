use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use csilabs::experiment::{self, PlotSpec, ResultTable, RunOptions};

/// Exit status when a run finished but some sweep points failed.
const EXIT_PARTIAL: u8 = 2;

#[derive(Parser)]
#[command(name = "csilabs", version, about = "CSI feedback simulator and experiment driver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every sweep point and seed of a scenario file.
    Run {
        #[arg(long, value_name = "PATH")]
        config: PathBuf,
        /// Run this single seed instead of the configured list.
        #[arg(long, value_name = "SEED")]
        seed_override: Option<u64>,
        /// Worker threads (0 uses every core).
        #[arg(long, value_name = "N")]
        workers: Option<usize>,
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Check a scenario file without running it.
    Validate {
        #[arg(long, value_name = "PATH")]
        config: PathBuf,
    },
    /// Average a results table over seeds into plot-ready CSV.
    PlotData {
        /// A `results.csv` written by `run`.
        #[arg(long, value_name = "PATH")]
        results: PathBuf,
        #[arg(long, default_value = "x")]
        x: String,
        #[arg(long, default_value = "nmse")]
        y: String,
        #[arg(long, default_value = "curve")]
        group_by: String,
        /// Write here instead of stdout.
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Run {
            config,
            seed_override,
            workers,
            out,
        } => {
            let opts = RunOptions {
                out,
                seed_override,
                workers,
            };
            let report = experiment::run(&config, &opts)
                .with_context(|| format!("running {}", config.display()))?;
            println!(
                "wrote {} rows to {} in {:.1}s",
                report.rows,
                report.results.display(),
                report.wall_time_s
            );
            println!("manifest: {}", report.manifest.display());
            if report.failures > 0 {
                eprintln!("warning: {} sweep points failed; see the status column", report.failures);
                return Ok(ExitCode::from(EXIT_PARTIAL));
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Validate { config } => {
            let cfg = experiment::validate(&config)
                .with_context(|| format!("{} is invalid", config.display()))?;
            println!(
                "ok: {} with {} seed(s)",
                cfg.kind.name(),
                cfg.seeds.len()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::PlotData {
            results,
            x,
            y,
            group_by,
            out,
        } => {
            let table = ResultTable::load(&results)
                .with_context(|| format!("reading {}", results.display()))?;
            let text = experiment::emit_plot_data(&table, &PlotSpec { x, y, group_by })?;
            match out {
                Some(path) => fs::write(&path, text)
                    .with_context(|| format!("writing {}", path.display()))?,
                None => print!("{text}"),
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}
