//! Persisted artifacts: per-iteration trace CSV, summary CSV and a JSON sidecar.
//!
//! Everything except `metadata.json` is a pure function of the config, so
//! reruns reproduce the CSV files byte for byte.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Deserialize;

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};
use crate::sweep::{RunOptions, SweepResult};

pub const TRACE_FILE: &str = "trace.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const METADATA_FILE: &str = "metadata.json";

pub const TRACE_HEADER: [&str; 6] = [
    "sweep_value",
    "run",
    "iteration",
    "msd",
    "malicious_weight_mass",
    "assumption_ok",
];

/// 17 significant digits, enough to round-trip any `f64`.
pub fn format_float(x: f64) -> String {
    format!("{x:.16e}")
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct TraceRow {
    pub sweep_value: f64,
    pub run: u64,
    pub iteration: usize,
    pub msd: f64,
    pub malicious_weight_mass: f64,
    pub assumption_ok: bool,
}

pub fn write_trace_csv<W: std::io::Write>(result: &SweepResult, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRACE_HEADER)?;
    for cell in &result.cells {
        let value = format_float(cell.sweep_value);
        let ok = cell.assumption_ok.to_string();
        for run in &cell.runs {
            let r = run.run.to_string();
            for (i, (msd, mass)) in run.msd.iter().zip(&run.malicious_weight_mass).enumerate() {
                w.write_record([
                    value.as_str(),
                    r.as_str(),
                    &(i + 1).to_string(),
                    &format_float(*msd),
                    &format_float(*mass),
                    ok.as_str(),
                ])?;
            }
        }
    }
    w.flush().map_err(|e| CliError::io("trace", e))?;
    Ok(())
}

pub fn read_trace_csv(path: &Path) -> Result<Vec<TraceRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != TRACE_HEADER {
        return Err(CliError::config(
            path.display().to_string(),
            format!("unexpected header {header:?}"),
        ));
    }
    r.deserialize()
        .map(|row| row.map_err(CliError::from))
        .collect()
}

pub fn write_summary_csv<W: std::io::Write>(result: &SweepResult, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "sweep_value",
        "steady_state_msd",
        "malicious_weight_mass",
        "assumption_ok",
        "diverged_runs",
    ])?;
    for cell in &result.cells {
        w.write_record([
            format_float(cell.sweep_value),
            format_float(cell.steady_state_msd()),
            format_float(cell.steady_state_mass()),
            cell.assumption_ok.to_string(),
            cell.diverged_runs().to_string(),
        ])?;
    }
    w.flush().map_err(|e| CliError::io("summary", e))?;
    Ok(())
}

/// Human-readable table for the terminal.
pub fn summary_table(result: &SweepResult) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:>14}  {:>14}  {:>14}  {:>10}  {:>8}",
        "sweep_value", "ss_msd", "mal_weight", "assump_ok", "diverged"
    );
    for cell in &result.cells {
        let _ = writeln!(
            s,
            "{:>14.6e}  {:>14.6e}  {:>14.6e}  {:>10}  {:>8}",
            cell.sweep_value,
            cell.steady_state_msd(),
            cell.steady_state_mass(),
            cell.assumption_ok,
            cell.diverged_runs()
        );
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct Artifacts {
    pub trace: PathBuf,
    pub summary: PathBuf,
    pub metadata: PathBuf,
}

/// Writes the trace, summary and metadata files into `dir`.
pub fn write_artifacts(
    result: &SweepResult,
    cfg: &ExperimentConfig,
    opts: &RunOptions,
    dir: &Path,
) -> Result<Artifacts> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let paths = Artifacts {
        trace: dir.join(TRACE_FILE),
        summary: dir.join(SUMMARY_FILE),
        metadata: dir.join(METADATA_FILE),
    };
    let open = |p: &Path| fs::File::create(p).map_err(|e| CliError::io(p, e));
    write_trace_csv(result, std::io::BufWriter::new(open(&paths.trace)?))?;
    write_summary_csv(result, open(&paths.summary)?)?;

    let timestamp = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let meta = serde_json::json!({
        "created_unix": timestamp,
        "version": env!("CARGO_PKG_VERSION"),
        "jobs": opts.jobs,
        "override_assumption1": opts.override_assumption1,
        "divergence_events": result.divergence_count(),
        "config": cfg,
    });
    fs::write(&paths.metadata, serde_json::to_string_pretty(&meta)?)
        .map_err(|e| CliError::io(&paths.metadata, e))?;
    Ok(paths)
}
