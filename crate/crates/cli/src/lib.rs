//! Config-driven experiment runner for robust diffusion learning.
//!
//! A config describes one network learning problem plus an optional sweep
//! over attack strength or malicious-agent rate. [`run_config`] executes it,
//! [`write_artifacts`] persists the results and [`compare_rules`] pairs
//! several aggregation rules on identical data.

pub mod compare;
pub mod config;
pub mod error;
pub mod report;
pub mod sweep;

pub use compare::{compare_rules, Comparison, ComparisonRow};
pub use config::{ExperimentConfig, RuleName, SweepAxis, SCHEMA_VERSION};
pub use error::{CliError, Result};
pub use report::{read_trace_csv, summary_table, write_artifacts, Artifacts, TraceRow};
pub use sweep::{run_config, CellResult, RunOptions, RunRecord, SweepResult};
