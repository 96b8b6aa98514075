//! Declarative experiment configuration.
//!
//! Configs are TOML files. Unknown keys are rejected so a typo never
//! silently falls back to a default. See `configs/` in the repository for
//! complete examples.

use std::path::{Path, PathBuf};

use robdiff_core::{
    build_topology, uniform_combination, validate_assumption1, AggregatorSpec, Assumption1Report,
    AttackSpec, DiffusionProblem, IrlsSettings, LinearModelTask, LossSpec, ModelVector,
    TopologyKind,
};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const SCHEMA_VERSION: u32 = 1;

/// Strength grid used when a strength sweep lists no values.
pub const DEFAULT_STRENGTHS: [f64; 6] = [0.0, 1.0, 10.0, 100.0, 1000.0, 10000.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    /// Master seed. Required: runs are never seeded from the clock.
    pub seed: u64,
    #[serde(default = "default_mu")]
    pub mu: f64,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default = "default_runs")]
    pub runs: usize,
    /// Contamination bound used for the per-cell neighborhood check.
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub task: TaskConfig,
    #[serde(default)]
    pub topology: TopologyConfig,
    #[serde(default)]
    pub aggregator: AggregatorConfig,
    #[serde(default)]
    pub attack: AttackConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
}

fn default_mu() -> f64 {
    0.01
}
fn default_iterations() -> usize {
    2000
}
fn default_runs() -> usize {
    5
}
fn default_epsilon() -> f64 {
    0.49
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskConfig {
    pub dim: usize,
    pub noise_var: f64,
    pub w_true: TrueModel,
    /// Per-agent minimizers for the heterogeneous variant.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agent_targets: Option<Vec<Vec<f64>>>,
}

impl Default for TaskConfig {
    fn default() -> Self {
        Self {
            dim: 10,
            noise_var: 0.01,
            w_true: TrueModel::Named(NamedModel::Unit),
            agent_targets: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TrueModel {
    Named(NamedModel),
    Explicit(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NamedModel {
    /// `𝟙/√M`.
    Unit,
    Ones,
    Zeros,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TopologyName {
    #[default]
    FullyConnected,
    Ring,
    ErdosRenyi,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyConfig {
    #[serde(default)]
    pub kind: TopologyName,
    pub agents: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prob: Option<f64>,
    /// Graph seed for random topologies; defaults to the master seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Explicit malicious agents. Rate sweeps choose them instead.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub malicious: Option<Vec<usize>>,
}

impl Default for TopologyConfig {
    fn default() -> Self {
        Self {
            kind: TopologyName::FullyConnected,
            agents: 32,
            prob: None,
            seed: None,
            malicious: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RuleName {
    Mean,
    CoordinateMedian,
    TrimmedMean,
    GeometricMedian,
    MEstimator,
    #[default]
    MmEstimator,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossName {
    Squared,
    Absolute,
    Huber,
    Tukey,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct AggregatorConfig {
    #[serde(default)]
    pub rule: RuleName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss: Option<LossName>,
    /// Huber `k` or Tukey `c`; the usual 95%-efficiency constants by default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tuning: Option<f64>,
    /// Fixed scale, M-estimator only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trim_fraction: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iters: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale_floor: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AttackName {
    #[default]
    None,
    AdditiveShift,
    SignFlip,
    ValueReplace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct AttackConfig {
    #[serde(default)]
    pub kind: AttackName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gain: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vector: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    #[default]
    None,
    /// Attack strength with the malicious set fixed.
    Strength,
    /// Fraction of malicious agents with the attack fixed.
    Rate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default)]
    pub axis: SweepAxis,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<f64>>,
}

/// One sweep cell, ready to run.
#[derive(Debug, Clone)]
pub struct CellPlan {
    pub sweep_value: f64,
    pub problem: DiffusionProblem,
    pub assumption: Assumption1Report,
}

impl ExperimentConfig {
    /// Defaults for everything except the seed.
    pub fn with_seed(seed: u64) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            name: None,
            seed,
            mu: default_mu(),
            iterations: default_iterations(),
            runs: default_runs(),
            epsilon: default_epsilon(),
            output: None,
            task: TaskConfig::default(),
            topology: TopologyConfig::default(),
            aggregator: AggregatorConfig::default(),
            attack: AttackConfig::default(),
            sweep: SweepConfig::default(),
        }
    }

    pub fn from_toml_str(text: &str, path: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|source| CliError::Parse {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml_str(&text, path)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.plan().map(|_| ())
    }

    /// Sweep values after defaults are applied.
    pub fn sweep_values(&self) -> Vec<f64> {
        if let Some(v) = &self.sweep.values {
            return v.clone();
        }
        match self.sweep.axis {
            SweepAxis::None => vec![0.0],
            SweepAxis::Strength => DEFAULT_STRENGTHS.to_vec(),
            SweepAxis::Rate => {
                let k = self.topology.agents;
                (0..=k.saturating_sub(1) / 2)
                    .map(|r| r as f64 / k as f64)
                    .collect()
            }
        }
    }

    /// Validates the config and builds every sweep cell.
    pub fn plan(&self) -> Result<Vec<CellPlan>> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(CliError::config(
                "schema_version",
                format!("expected {SCHEMA_VERSION}, got {}", self.schema_version),
            ));
        }
        if !(self.mu.is_finite() && self.mu > 0.0) {
            return Err(CliError::config(
                "mu",
                format!("must be > 0, got {}", self.mu),
            ));
        }
        if self.iterations == 0 {
            return Err(CliError::config("iterations", "must be >= 1"));
        }
        if self.runs == 0 {
            return Err(CliError::config("runs", "must be >= 1"));
        }
        if !(0.0..0.5).contains(&self.epsilon) {
            return Err(CliError::config(
                "epsilon",
                format!("must lie in [0, 0.5), got {}", self.epsilon),
            ));
        }
        let task = self.build_task()?;
        let aggregator = self.build_aggregator()?;
        self.check_topology_fields()?;
        self.check_attack_fields()?;

        let values = self.sweep_values();
        if values.is_empty() {
            return Err(CliError::config("sweep.values", "must not be empty"));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(CliError::config(
                format!("sweep.values[{i}]"),
                "must be finite",
            ));
        }
        if self.sweep.axis == SweepAxis::None && self.sweep.values.is_some() {
            return Err(CliError::config(
                "sweep.values",
                "not used without a sweep axis",
            ));
        }

        values
            .iter()
            .enumerate()
            .map(|(i, &value)| {
                let malicious = self.malicious_for(value, i)?;
                let attack = self.attack_for(value)?;
                let topology =
                    build_topology(self.topology_kind(), self.topology.agents, &malicious)
                        .map_err(|e| CliError::config("topology", e.to_string()))?;
                let assumption = validate_assumption1(&topology, self.epsilon)?;
                let combination = uniform_combination(&topology);
                Ok(CellPlan {
                    sweep_value: value,
                    problem: DiffusionProblem {
                        task: task.clone(),
                        topology,
                        combination,
                        aggregator: aggregator.clone(),
                        attack,
                    },
                    assumption,
                })
            })
            .collect()
    }

    fn build_task(&self) -> Result<LinearModelTask> {
        let t = &self.task;
        if t.dim == 0 {
            return Err(CliError::config("task.dim", "must be >= 1"));
        }
        if !(t.noise_var.is_finite() && t.noise_var >= 0.0) {
            return Err(CliError::config(
                "task.noise_var",
                "must be finite and >= 0",
            ));
        }
        let w = match &t.w_true {
            TrueModel::Named(NamedModel::Unit) => {
                ModelVector::from_element(t.dim, 1.0 / (t.dim as f64).sqrt())
            }
            TrueModel::Named(NamedModel::Ones) => ModelVector::from_element(t.dim, 1.0),
            TrueModel::Named(NamedModel::Zeros) => ModelVector::zeros(t.dim),
            TrueModel::Explicit(v) => {
                if v.len() != t.dim {
                    return Err(CliError::config(
                        "task.w_true",
                        format!("has {} entries, task.dim is {}", v.len(), t.dim),
                    ));
                }
                ModelVector::from_vec(v.clone())
            }
        };
        let task = LinearModelTask::new(w, t.noise_var)
            .map_err(|e| CliError::config("task", e.to_string()))?;
        match &t.agent_targets {
            None => Ok(task),
            Some(targets) => {
                if targets.len() != self.topology.agents {
                    return Err(CliError::config(
                        "task.agent_targets",
                        format!(
                            "has {} entries for {} agents",
                            targets.len(),
                            self.topology.agents
                        ),
                    ));
                }
                if let Some(i) = targets.iter().position(|v| v.len() != t.dim) {
                    return Err(CliError::config(
                        format!("task.agent_targets[{i}]"),
                        format!("must have {} entries", t.dim),
                    ));
                }
                task.with_agent_targets(
                    targets
                        .iter()
                        .map(|v| ModelVector::from_vec(v.clone()))
                        .collect(),
                )
                .map_err(|e| CliError::config("task.agent_targets", e.to_string()))
            }
        }
    }

    fn build_aggregator(&self) -> Result<AggregatorSpec> {
        let a = &self.aggregator;
        let unused = |field: &str, present: bool| -> Result<()> {
            if present {
                Err(CliError::config(
                    format!("aggregator.{field}"),
                    format!("not used by rule {:?}", a.rule).to_lowercase(),
                ))
            } else {
                Ok(())
            }
        };
        let mut irls = IrlsSettings::default();
        if let Some(n) = a.max_iters {
            irls.max_iters = n;
        }
        if let Some(t) = a.tol {
            irls.tol = t;
        }
        if let Some(f) = a.scale_floor {
            irls.scale_floor = f;
        }
        let iterative = matches!(
            a.rule,
            RuleName::GeometricMedian | RuleName::MEstimator | RuleName::MmEstimator
        );
        if !iterative {
            unused("max_iters", a.max_iters.is_some())?;
            unused("tol", a.tol.is_some())?;
            unused("scale_floor", a.scale_floor.is_some())?;
        }
        let uses_loss = matches!(a.rule, RuleName::MEstimator | RuleName::MmEstimator);
        if !uses_loss {
            unused("loss", a.loss.is_some())?;
            unused("tuning", a.tuning.is_some())?;
        }
        if a.rule != RuleName::MEstimator {
            unused("scale", a.scale.is_some())?;
        }
        if a.rule != RuleName::TrimmedMean {
            unused("trim_fraction", a.trim_fraction.is_some())?;
        }

        let loss = match (a.loss.unwrap_or(LossName::Tukey), a.tuning) {
            (LossName::Squared, None) => LossSpec::SquaredError,
            (LossName::Absolute, None) => LossSpec::AbsoluteError,
            (LossName::Squared | LossName::Absolute, Some(_)) => {
                return Err(CliError::config(
                    "aggregator.tuning",
                    "not used by this loss",
                ))
            }
            (LossName::Huber, k) => LossSpec::Huber {
                k: k.unwrap_or(robdiff_core::estimators::HUBER_K),
            },
            (LossName::Tukey, c) => LossSpec::TukeyBisquare {
                c: c.unwrap_or(robdiff_core::estimators::TUKEY_C),
            },
        };
        let spec = match a.rule {
            RuleName::Mean => AggregatorSpec::Mean,
            RuleName::CoordinateMedian => AggregatorSpec::CoordinateMedian,
            RuleName::TrimmedMean => AggregatorSpec::TrimmedMean {
                trim_fraction: a.trim_fraction.unwrap_or(0.1),
            },
            RuleName::GeometricMedian => AggregatorSpec::GeometricMedian { irls },
            RuleName::MEstimator => AggregatorSpec::MEstimator {
                loss,
                scale: a.scale.ok_or_else(|| {
                    CliError::config("aggregator.scale", "required for m_estimator")
                })?,
                irls,
            },
            RuleName::MmEstimator => AggregatorSpec::MMEstimator { loss, irls },
        };
        spec.validate()
            .map_err(|e| CliError::config("aggregator", e.to_string()))?;
        Ok(spec)
    }

    fn topology_kind(&self) -> TopologyKind {
        match self.topology.kind {
            TopologyName::FullyConnected => TopologyKind::FullyConnected,
            TopologyName::Ring => TopologyKind::Ring,
            TopologyName::ErdosRenyi => TopologyKind::ErdosRenyi {
                prob: self.topology.prob.unwrap_or(f64::NAN),
                seed: self.topology.seed.unwrap_or(self.seed),
            },
        }
    }

    fn check_topology_fields(&self) -> Result<()> {
        let t = &self.topology;
        if t.agents < 2 {
            return Err(CliError::config("topology.agents", "must be >= 2"));
        }
        if t.kind == TopologyName::ErdosRenyi {
            match t.prob {
                Some(p) if p > 0.0 && p <= 1.0 => {}
                Some(p) => {
                    return Err(CliError::config(
                        "topology.prob",
                        format!("must lie in (0, 1], got {p}"),
                    ))
                }
                None => {
                    return Err(CliError::config(
                        "topology.prob",
                        "required for erdos_renyi",
                    ))
                }
            }
        } else {
            if t.prob.is_some() {
                return Err(CliError::config(
                    "topology.prob",
                    "only used by erdos_renyi",
                ));
            }
            if t.seed.is_some() {
                return Err(CliError::config(
                    "topology.seed",
                    "only used by erdos_renyi",
                ));
            }
        }
        if let Some(m) = &t.malicious {
            if self.sweep.axis == SweepAxis::Rate {
                return Err(CliError::config(
                    "topology.malicious",
                    "rate sweeps choose the malicious agents",
                ));
            }
            for (i, &k) in m.iter().enumerate() {
                if k >= t.agents {
                    return Err(CliError::config(
                        format!("topology.malicious[{i}]"),
                        format!("agent {k} out of range for {} agents", t.agents),
                    ));
                }
                if m[..i].contains(&k) {
                    return Err(CliError::config(
                        format!("topology.malicious[{i}]"),
                        format!("agent {k} listed twice"),
                    ));
                }
            }
            if m.len() >= t.agents {
                return Err(CliError::config(
                    "topology.malicious",
                    "no benign agents left",
                ));
            }
        }
        Ok(())
    }

    fn check_attack_fields(&self) -> Result<()> {
        let a = &self.attack;
        let strength = self.sweep.axis == SweepAxis::Strength;
        let forbid = |field: &str, present: bool, why: &str| -> Result<()> {
            if present {
                Err(CliError::config(format!("attack.{field}"), why.to_string()))
            } else {
                Ok(())
            }
        };
        match a.kind {
            AttackName::None => {
                forbid("delta", a.delta.is_some(), "not used without an attack")?;
                forbid("gain", a.gain.is_some(), "not used without an attack")?;
                forbid("vector", a.vector.is_some(), "not used without an attack")?;
                if self.sweep.axis == SweepAxis::Rate {
                    return Err(CliError::config(
                        "attack.kind",
                        "a rate sweep needs an attack",
                    ));
                }
            }
            AttackName::AdditiveShift => {
                forbid("gain", a.gain.is_some(), "only used by sign_flip")?;
                forbid("vector", a.vector.is_some(), "only used by value_replace")?;
                if strength {
                    forbid("delta", a.delta.is_some(), "set by the strength sweep")?;
                } else {
                    match a.delta {
                        Some(d) if d.is_finite() => {}
                        Some(_) => return Err(CliError::config("attack.delta", "must be finite")),
                        None => {
                            return Err(CliError::config(
                                "attack.delta",
                                "required for additive_shift",
                            ))
                        }
                    }
                }
            }
            AttackName::SignFlip => {
                forbid("delta", a.delta.is_some(), "only used by additive_shift")?;
                forbid("vector", a.vector.is_some(), "only used by value_replace")?;
                if strength {
                    forbid("gain", a.gain.is_some(), "set by the strength sweep")?;
                } else if !a.gain.is_some_and(f64::is_finite) {
                    return Err(CliError::config(
                        "attack.gain",
                        "required for sign_flip and must be finite",
                    ));
                }
            }
            AttackName::ValueReplace => {
                forbid("delta", a.delta.is_some(), "only used by additive_shift")?;
                forbid("gain", a.gain.is_some(), "only used by sign_flip")?;
                if strength {
                    return Err(CliError::config(
                        "attack.kind",
                        "value_replace has no strength to sweep",
                    ));
                }
                match &a.vector {
                    Some(v) if v.len() == self.task.dim && v.iter().all(|x| x.is_finite()) => {}
                    Some(_) => {
                        return Err(CliError::config(
                            "attack.vector",
                            format!("must hold {} finite entries", self.task.dim),
                        ))
                    }
                    None => {
                        return Err(CliError::config(
                            "attack.vector",
                            "required for value_replace",
                        ))
                    }
                }
            }
        }
        Ok(())
    }

    fn malicious_for(&self, value: f64, index: usize) -> Result<Vec<usize>> {
        let k = self.topology.agents;
        match self.sweep.axis {
            SweepAxis::Rate => {
                let count = (value * k as f64).round();
                if !(0.0..k as f64).contains(&count) || (count - value * k as f64).abs() > 1e-9 {
                    return Err(CliError::config(
                        format!("sweep.values[{index}]"),
                        format!("rate {value} is not r/{k} for an integer 0 <= r < {k}"),
                    ));
                }
                let count = count as usize;
                Ok((k - count..k).collect())
            }
            SweepAxis::Strength => Ok(self
                .topology
                .malicious
                .clone()
                .unwrap_or_else(|| vec![k - 1])),
            SweepAxis::None => Ok(self.topology.malicious.clone().unwrap_or_default()),
        }
    }

    fn attack_for(&self, value: f64) -> Result<AttackSpec> {
        let a = &self.attack;
        let strength = self.sweep.axis == SweepAxis::Strength;
        Ok(match a.kind {
            AttackName::None if strength => AttackSpec::AdditiveShift { delta: value },
            AttackName::None => AttackSpec::None,
            AttackName::AdditiveShift => AttackSpec::AdditiveShift {
                delta: if strength {
                    value
                } else {
                    a.delta.unwrap_or(0.0)
                },
            },
            AttackName::SignFlip => AttackSpec::SignFlip {
                gain: if strength {
                    value
                } else {
                    a.gain.unwrap_or(0.0)
                },
            },
            AttackName::ValueReplace => AttackSpec::ValueReplace {
                vector: ModelVector::from_vec(a.vector.clone().unwrap_or_default()),
            },
        })
    }
}
