//! Command-line workflows: generate scenarios, solve, analyze, sweep, and
//! the built-in property suites.

mod commands;
mod config;
pub mod suite;

pub use commands::{
    cmd_analyze, cmd_generate, cmd_solve, cmd_sweep, csv_header, csv_row, AnalysisRecord,
    ClusterSelector, CSV_COLUMNS,
};
pub use config::{ExperimentConfig, SolverChoice, SolverKind};
