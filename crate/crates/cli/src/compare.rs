//! Paired comparison of aggregation rules on otherwise identical configs.

use std::fmt::Write as _;

use crate::config::{ExperimentConfig, RuleName};
use crate::error::{CliError, Result};
use crate::sweep::{run_config, RunOptions, SweepResult};

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub label: String,
    pub rule: RuleName,
    pub sweep_value: f64,
    pub steady_state_msd: f64,
    /// Against the Mean rule in the same cell, or the first config if no
    /// config uses Mean.
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
    pub results: Vec<SweepResult>,
}

impl Comparison {
    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<24}  {:>14}  {:>14}  {:>10}",
            "rule", "sweep_value", "ss_msd", "ratio"
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<24}  {:>14.6e}  {:>14.6e}  {:>10.4}",
                r.label, r.sweep_value, r.steady_state_msd, r.ratio
            );
        }
        s
    }

    /// Steady-state MSD of the first row with this rule and sweep value.
    pub fn msd(&self, rule: RuleName, sweep_value: f64) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.rule == rule && r.sweep_value == sweep_value)
            .map(|r| r.steady_state_msd)
    }
}

fn label(cfg: &ExperimentConfig) -> String {
    cfg.name.clone().unwrap_or_else(|| {
        serde_json::to_value(cfg.aggregator.rule)
            .ok()
            .and_then(|v| v.as_str().map(str::to_string))
            .unwrap_or_default()
    })
}

/// Runs each config and tabulates steady-state MSD per rule and cell.
pub fn compare_rules(cfgs: &[ExperimentConfig], opts: &RunOptions) -> Result<Comparison> {
    let Some(first) = cfgs.first() else {
        return Err(CliError::config(
            "compare",
            "at least one config is required",
        ));
    };
    let strip = |c: &ExperimentConfig| {
        let mut c = c.clone();
        c.aggregator = first.aggregator.clone();
        c.name = None;
        c.output = None;
        c
    };
    let base = strip(first);
    for (i, c) in cfgs.iter().enumerate().skip(1) {
        if strip(c) != base {
            return Err(CliError::Mismatch(format!(
                "config {i} ({}) differs from config 0 ({})",
                label(c),
                label(first)
            )));
        }
    }

    let results: Vec<SweepResult> = cfgs
        .iter()
        .map(|c| run_config(c, opts))
        .collect::<Result<_>>()?;
    let baseline = cfgs
        .iter()
        .position(|c| c.aggregator.rule == RuleName::Mean)
        .unwrap_or(0);

    let mut rows = Vec::new();
    for (cfg, res) in cfgs.iter().zip(&results) {
        for (cell, base_cell) in res.cells.iter().zip(&results[baseline].cells) {
            let msd = cell.steady_state_msd();
            rows.push(ComparisonRow {
                label: label(cfg),
                rule: cfg.aggregator.rule,
                sweep_value: cell.sweep_value,
                steady_state_msd: msd,
                ratio: msd / base_cell.steady_state_msd(),
            });
        }
    }
    Ok(Comparison { rows, results })
}
