//! Runs every sweep cell and Monte-Carlo run of a config.

use rayon::prelude::*;
use robdiff_core::{run_diffusion, steady_state_window, DivergenceEvent, RunSettings, Trace};

use crate::config::{CellPlan, ExperimentConfig, SweepAxis};
use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    /// Worker threads for cells and runs. Results do not depend on it.
    pub jobs: usize,
    /// Run cells whose neighborhoods break the contamination bound.
    pub override_assumption1: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            jobs: 1,
            override_assumption1: false,
        }
    }
}

/// Metrics of one Monte-Carlo run, padded to the configured length.
///
/// Iterations after a divergence carry `msd = inf` and a NaN weight mass.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub run: u64,
    pub msd: Vec<f64>,
    pub malicious_weight_mass: Vec<f64>,
    pub divergence: Option<DivergenceEvent>,
}

impl RunRecord {
    fn from_trace(run: u64, trace: Trace, iterations: usize) -> Self {
        let mut msd = trace.msd;
        let mut mass = trace.malicious_weight_mass;
        msd.resize(iterations, f64::INFINITY);
        mass.resize(iterations, f64::NAN);
        Self {
            run,
            msd,
            malicious_weight_mass: mass,
            divergence: trace.divergence,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub sweep_value: f64,
    pub assumption_ok: bool,
    pub assumption_detail: String,
    pub runs: Vec<RunRecord>,
}

impl CellResult {
    /// Mean MSD over the final window of every run; `inf` if any run diverged.
    pub fn steady_state_msd(&self) -> f64 {
        window_mean(&self.runs, |r| &r.msd)
    }

    /// Mean malicious weight mass over the same window.
    pub fn steady_state_mass(&self) -> f64 {
        window_mean(&self.runs, |r| &r.malicious_weight_mass)
    }

    pub fn diverged_runs(&self) -> usize {
        self.runs.iter().filter(|r| r.divergence.is_some()).count()
    }
}

fn window_mean(runs: &[RunRecord], series: impl Fn(&RunRecord) -> &Vec<f64>) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for r in runs {
        let s = series(r);
        let w = steady_state_window(s.len());
        for &x in &s[s.len() - w..] {
            total += x;
            count += 1;
        }
    }
    if count == 0 {
        f64::NAN
    } else {
        total / count as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub axis: SweepAxis,
    pub iterations: usize,
    pub cells: Vec<CellResult>,
}

impl SweepResult {
    pub fn divergence_count(&self) -> usize {
        self.cells.iter().map(CellResult::diverged_runs).sum()
    }
}

/// Executes every cell of `cfg`.
///
/// All cells use the same master seed and run indices, so cells of a sweep
/// and rules in a comparison see identical data streams.
pub fn run_config(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<SweepResult> {
    let plan = cfg.plan()?;
    if !opts.override_assumption1 {
        if let Some(bad) = plan.iter().find(|c| !c.assumption.passed()) {
            return Err(CliError::Assumption {
                sweep_value: bad.sweep_value,
                report: bad.assumption.to_string(),
            });
        }
    }
    let jobs: Vec<(usize, u64)> = (0..plan.len())
        .flat_map(|c| (0..cfg.runs as u64).map(move |r| (c, r)))
        .collect();

    let execute = |&(c, r): &(usize, u64)| -> Result<RunRecord> {
        let cell: &CellPlan = &plan[c];
        let mut settings = RunSettings::new(cfg.mu, cfg.iterations, cfg.seed);
        settings.run = r;
        settings.epsilon = cfg.epsilon;
        settings.override_assumption1 = opts.override_assumption1;
        let trace = run_diffusion(&cell.problem, &settings)?;
        Ok(RunRecord::from_trace(r, trace, cfg.iterations))
    };

    let records: Vec<RunRecord> = if opts.jobs <= 1 {
        jobs.iter().map(execute).collect::<Result<_>>()?
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(opts.jobs)
            .build()
            .expect("thread pool");
        pool.install(|| jobs.par_iter().map(execute).collect::<Result<_>>())?
    };

    let mut records = records.into_iter();
    let cells = plan
        .iter()
        .map(|cell| CellResult {
            sweep_value: cell.sweep_value,
            assumption_ok: cell.assumption.passed(),
            assumption_detail: cell.assumption.to_string(),
            runs: records.by_ref().take(cfg.runs).collect(),
        })
        .collect();
    Ok(SweepResult {
        axis: cfg.sweep.axis,
        iterations: cfg.iterations,
        cells,
    })
}
