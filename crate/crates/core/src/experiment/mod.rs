//! Scenario files, sweeps and result tables.

mod config;
mod run;
mod table;

pub use config::{validate, BenchmarkConfig, ExperimentConfig, MultiuserSweep, ScenarioKind};
pub use run::{execute, model_label, run, RoundLog, RunOptions, RunReport};
pub use table::{emit_plot_data, mean_stderr, PlotSpec, ResultRow, ResultTable, SCHEMA_VERSION};
