//! Adapt-then-combine diffusion on a streaming linear regression task.
//!
//! Each iteration every agent draws one sample `(u, d)`, takes a stochastic
//! gradient step to get `φ_k`, malicious agents perturb theirs, and then every
//! agent aggregates the `φ_ℓ` of its neighborhood with the configured rule.
//!
//! Randomness is split into one ChaCha stream per `(seed, run, agent)`; see
//! [`agent_rng`]. Within a stream each iteration consumes `M` draws for `u`
//! followed by one draw for the observation noise, always in that order.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::aggregate::{aggregate, effective_weight_summary, AggregatorSpec};
use crate::error::{Error, Result};
use crate::network::{validate_assumption1, CombinationMatrix, PerronVector, Topology};
use crate::ModelVector;

/// Fraction of final iterations averaged for steady-state MSD.
pub const STEADY_STATE_FRACTION: f64 = 0.1;

/// `d_k = u_kᵀ w_k^o + v_k` with `u_k ~ N(0, I)` and `v_k ~ N(0, σ_v²)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModelTask {
    w_true: ModelVector,
    noise_var: f64,
    agent_targets: Option<Vec<ModelVector>>,
}

impl LinearModelTask {
    pub fn new(w_true: ModelVector, noise_var: f64) -> Result<Self> {
        if w_true.is_empty() {
            return Err(Error::invalid("model dimension must be >= 1"));
        }
        if w_true.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("w_true"));
        }
        if !(noise_var.is_finite() && noise_var >= 0.0) {
            return Err(Error::invalid(format!(
                "noise variance must be >= 0, got {noise_var}"
            )));
        }
        Ok(Self {
            w_true,
            noise_var,
            agent_targets: None,
        })
    }

    /// Ten-dimensional unit-norm `w^o = 𝟙/√10` with `σ_v² = 0.01`.
    pub fn standard() -> Self {
        let m = 10;
        Self::new(ModelVector::from_element(m, 1.0 / (m as f64).sqrt()), 0.01)
            .expect("valid constants")
    }

    /// Gives each agent its own minimizer `w_k^o`.
    pub fn with_agent_targets(mut self, targets: Vec<ModelVector>) -> Result<Self> {
        if targets.iter().any(|t| t.len() != self.dim()) {
            return Err(Error::invalid(
                "agent targets must match the model dimension",
            ));
        }
        if targets.iter().any(|t| t.iter().any(|x| !x.is_finite())) {
            return Err(Error::NonFinite("agent target"));
        }
        self.agent_targets = Some(targets);
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.w_true.len()
    }

    pub fn w_true(&self) -> &ModelVector {
        &self.w_true
    }

    pub fn noise_var(&self) -> f64 {
        self.noise_var
    }

    pub fn target(&self, agent: usize) -> &ModelVector {
        match &self.agent_targets {
            Some(t) => &t[agent],
            None => &self.w_true,
        }
    }

    fn check_agents(&self, agents: usize) -> Result<()> {
        match &self.agent_targets {
            Some(t) if t.len() != agents => Err(Error::invalid(format!(
                "{} agent targets for {agents} agents",
                t.len()
            ))),
            _ => Ok(()),
        }
    }

    /// `∇J_k(w) = R_u (w − w_k^o)` with `R_u = I`.
    pub fn true_gradient(&self, agent: usize, w: &ModelVector) -> ModelVector {
        w - self.target(agent)
    }

    /// Per-agent quadratic costs `½ (w − w_k^o)ᵀ I (w − w_k^o)` (up to a constant).
    pub fn quadratic_costs(&self, agents: &[usize]) -> Vec<QuadraticCost> {
        agents
            .iter()
            .map(|&k| QuadraticCost {
                hessian: DMatrix::identity(self.dim(), self.dim()),
                minimizer: self.target(k).clone(),
            })
            .collect()
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Random stream for one agent in one Monte-Carlo run.
///
/// The ChaCha8 key comes from `splitmix64(seed ^ splitmix64(run))` and the
/// agent index selects the stream, so adding agents leaves the draws of
/// existing agents untouched.
pub fn agent_rng(seed: u64, run: u64, agent: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(run)));
    rng.set_stream(agent as u64);
    rng
}

/// One `(u, d)` pair for `agent`.
pub fn sample_data<R: Rng + ?Sized>(
    task: &LinearModelTask,
    agent: usize,
    rng: &mut R,
) -> (ModelVector, f64) {
    let u = ModelVector::from_fn(task.dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
    let noise: f64 = rng.sample(StandardNormal);
    let d = u.dot(task.target(agent)) + task.noise_var.sqrt() * noise;
    (u, d)
}

/// `−u (d − uᵀw)`, an unbiased estimate of `∇J(w)` for `J(w) = ½ E(d − uᵀw)²`.
pub fn stochastic_gradient(w: &ModelVector, u: &ModelVector, d: f64) -> ModelVector {
    u * (u.dot(w) - d)
}

/// `w − μ·grad`.
pub fn adapt_step(w: &ModelVector, grad: &ModelVector, mu: f64) -> ModelVector {
    w - grad * mu
}

/// Perturbation a malicious agent applies to its adapted model before sharing it.
#[derive(Debug, Clone, PartialEq)]
pub enum AttackSpec {
    None,
    /// `φ + δ𝟙`.
    AdditiveShift {
        delta: f64,
    },
    /// `−gain·φ`.
    SignFlip {
        gain: f64,
    },
    /// Always report this vector.
    ValueReplace {
        vector: ModelVector,
    },
}

impl AttackSpec {
    pub fn validate(&self, dim: usize) -> Result<()> {
        match self {
            AttackSpec::None => Ok(()),
            AttackSpec::AdditiveShift { delta } if !delta.is_finite() => {
                Err(Error::NonFinite("attack delta"))
            }
            AttackSpec::SignFlip { gain } if !gain.is_finite() => {
                Err(Error::NonFinite("attack gain"))
            }
            AttackSpec::ValueReplace { vector } if vector.len() != dim => {
                Err(Error::invalid(format!(
                    "replacement vector has length {}, expected {dim}",
                    vector.len()
                )))
            }
            AttackSpec::ValueReplace { vector } if vector.iter().any(|x| !x.is_finite()) => {
                Err(Error::NonFinite("replacement vector"))
            }
            _ => Ok(()),
        }
    }
}

pub fn apply_attack(phi: &ModelVector, spec: &AttackSpec) -> ModelVector {
    match spec {
        AttackSpec::None => phi.clone(),
        AttackSpec::AdditiveShift { delta } => phi.add_scalar(*delta),
        AttackSpec::SignFlip { gain } => phi * -*gain,
        AttackSpec::ValueReplace { vector } => vector.clone(),
    }
}

/// Everything that defines the network learning problem.
#[derive(Debug, Clone)]
pub struct DiffusionProblem {
    pub task: LinearModelTask,
    pub topology: Topology,
    pub combination: CombinationMatrix,
    pub aggregator: AggregatorSpec,
    /// Applied by every malicious agent.
    pub attack: AttackSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSettings {
    pub mu: f64,
    pub iterations: usize,
    pub seed: u64,
    /// Monte-Carlo run index; selects independent RNG streams.
    pub run: u64,
    /// Contamination bound checked before the run starts.
    pub epsilon: f64,
    pub override_assumption1: bool,
    /// MSD reference; defaults to the task's `w_true`.
    pub reference: Option<ModelVector>,
    /// Starting iterate for every agent; defaults to zero.
    pub initial: Option<ModelVector>,
    /// Start iteration (1-based) of the window over which iterates and
    /// effective weights are averaged into [`Trace::profile`].
    pub profile_from: Option<usize>,
    /// Benign iterates with a larger norm count as diverged.
    pub divergence_threshold: f64,
}

impl RunSettings {
    pub fn new(mu: f64, iterations: usize, seed: u64) -> Self {
        Self {
            mu,
            iterations,
            seed,
            run: 0,
            epsilon: 0.49,
            override_assumption1: false,
            reference: None,
            initial: None,
            profile_from: None,
            divergence_threshold: 1e100,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DivergenceEvent {
    pub iteration: usize,
    pub agent: usize,
}

/// Time averages over the profiling window.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowProfile {
    pub from: usize,
    pub samples: usize,
    /// Per-agent average iterate.
    pub mean_iterates: Vec<ModelVector>,
    /// `[ℓ, k]`: effective weight agent `k` put on neighbor `ℓ`, averaged
    /// over coordinates and iterations.
    pub mean_effective_weights: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    /// Per iteration, average of `‖reference − w_k‖²` over benign agents.
    pub msd: Vec<f64>,
    /// Per iteration, effective weight mass benign agents put on malicious
    /// neighbors, averaged over coordinates and benign agents.
    pub malicious_weight_mass: Vec<f64>,
    /// Per iteration, fraction of coordinates whose estimator converged.
    pub converged_fraction: Vec<f64>,
    /// Set when a benign iterate left the finite range; the run stops there.
    pub divergence: Option<DivergenceEvent>,
    pub final_iterates: Vec<ModelVector>,
    pub benign: Vec<usize>,
    pub profile: Option<WindowProfile>,
}

impl Trace {
    pub fn diverged(&self) -> bool {
        self.divergence.is_some()
    }
}

/// Runs the diffusion strategy and records per-iteration metrics.
pub fn run_diffusion(problem: &DiffusionProblem, settings: &RunSettings) -> Result<Trace> {
    let DiffusionProblem {
        task,
        topology,
        combination,
        aggregator,
        attack,
    } = problem;
    let k_count = topology.agents();
    let dim = task.dim();

    if settings.iterations == 0 {
        return Err(Error::invalid("iterations must be >= 1"));
    }
    if !(settings.mu.is_finite() && settings.mu > 0.0) {
        return Err(Error::invalid(format!(
            "step size must be > 0, got {}",
            settings.mu
        )));
    }
    if combination.size() != k_count {
        return Err(Error::invalid(
            "combination matrix size differs from agent count",
        ));
    }
    for k in 0..k_count {
        for l in 0..k_count {
            if combination.weight(l, k) > 0.0 && !topology.connected(l, k) {
                return Err(Error::invalid(format!(
                    "combination weight a[{l},{k}] outside the topology"
                )));
            }
        }
    }
    task.check_agents(k_count)?;
    aggregator.validate()?;
    attack.validate(dim)?;
    if !settings.override_assumption1 {
        let report = validate_assumption1(topology, settings.epsilon)?;
        if !report.passed() {
            return Err(Error::AssumptionViolated(report.to_string()));
        }
    }
    let reference = settings
        .reference
        .clone()
        .unwrap_or_else(|| task.w_true().clone());
    if reference.len() != dim {
        return Err(Error::invalid("reference dimension differs from the task"));
    }
    let initial = settings
        .initial
        .clone()
        .unwrap_or_else(|| ModelVector::zeros(dim));
    if initial.len() != dim {
        return Err(Error::invalid(
            "initial iterate dimension differs from the task",
        ));
    }

    let benign = topology.benign_agents();
    let malicious: Vec<bool> = (0..k_count).map(|k| topology.is_malicious(k)).collect();

    // Agents with identical (support, weights) aggregate identical inputs, so
    // each distinct neighborhood is evaluated once per iteration.
    let supports: Vec<(Vec<usize>, Vec<f64>)> =
        (0..k_count).map(|k| combination.support(k)).collect();
    let mut group_of = vec![0usize; k_count];
    let mut leaders: Vec<usize> = Vec::new();
    for k in 0..k_count {
        match leaders.iter().position(|&g| supports[g] == supports[k]) {
            Some(g) => group_of[k] = g,
            None => {
                group_of[k] = leaders.len();
                leaders.push(k);
            }
        }
    }
    let malicious_positions: Vec<Vec<usize>> = leaders
        .iter()
        .map(|&g| {
            supports[g]
                .0
                .iter()
                .enumerate()
                .filter(|(_, &l)| malicious[l])
                .map(|(pos, _)| pos)
                .collect()
        })
        .collect();

    let mut rngs: Vec<ChaCha8Rng> = (0..k_count)
        .map(|k| agent_rng(settings.seed, settings.run, k))
        .collect();
    let mut w: Vec<ModelVector> = vec![initial; k_count];
    let mut phi: Vec<ModelVector> = vec![ModelVector::zeros(dim); k_count];

    let mut trace = Trace {
        msd: Vec::with_capacity(settings.iterations),
        malicious_weight_mass: Vec::with_capacity(settings.iterations),
        converged_fraction: Vec::with_capacity(settings.iterations),
        divergence: None,
        final_iterates: Vec::new(),
        benign: benign.clone(),
        profile: None,
    };
    let mut profile = settings.profile_from.map(|from| WindowProfile {
        from,
        samples: 0,
        mean_iterates: vec![ModelVector::zeros(dim); k_count],
        mean_effective_weights: DMatrix::zeros(k_count, k_count),
    });

    for iteration in 1..=settings.iterations {
        for k in 0..k_count {
            let (u, d) = sample_data(task, k, &mut rngs[k]);
            let grad = stochastic_gradient(&w[k], &u, d);
            let adapted = adapt_step(&w[k], &grad, settings.mu);
            phi[k] = if malicious[k] {
                apply_attack(&adapted, attack)
            } else {
                adapted
            };
        }

        let mut outputs = Vec::with_capacity(leaders.len());
        for &g in &leaders {
            let (nb, weights) = &supports[g];
            let refs: Vec<&ModelVector> = nb.iter().map(|&l| &phi[l]).collect();
            let out = aggregate(&refs, weights, aggregator).map_err(|e| Error::Aggregation {
                iteration,
                agent: g,
                source: Box::new(e),
            })?;
            outputs.push(out);
        }

        let mut mass = 0.0;
        let mut converged = 0usize;
        for k in 0..k_count {
            let out = &outputs[group_of[k]];
            w[k].copy_from(&out.model);
            if !malicious[k] {
                mass += effective_weight_summary(out, &malicious_positions[group_of[k]]);
                converged += out.converged_coords;
            }
        }

        if let Some(&agent) = benign.iter().find(|&&k| {
            w[k].iter().any(|x| !x.is_finite()) || w[k].norm() > settings.divergence_threshold
        }) {
            trace.divergence = Some(DivergenceEvent { iteration, agent });
            break;
        }

        let nb = benign.len().max(1) as f64;
        let dev: f64 = benign
            .iter()
            .map(|&k| (&reference - &w[k]).norm_squared())
            .sum();
        trace.msd.push(dev / nb);
        trace.malicious_weight_mass.push(mass / nb);
        trace
            .converged_fraction
            .push(converged as f64 / (nb * dim as f64));

        if let Some(p) = profile.as_mut().filter(|p| iteration >= p.from) {
            p.samples += 1;
            for k in 0..k_count {
                p.mean_iterates[k] += &w[k];
                let out = &outputs[group_of[k]];
                let (nb, _) = &supports[group_of[k]];
                for (pos, &l) in nb.iter().enumerate() {
                    p.mean_effective_weights[(l, k)] += out.effective_weights.row(pos).mean();
                }
            }
        }
    }

    if let Some(mut p) = profile {
        if p.samples > 0 {
            let s = p.samples as f64;
            for m in &mut p.mean_iterates {
                *m /= s;
            }
            p.mean_effective_weights /= s;
        }
        trace.profile = Some(p);
    }
    trace.final_iterates = w;
    Ok(trace)
}

/// Average of `‖reference − w‖²` over every iterate in every snapshot.
///
/// A snapshot holds the benign iterates of one iteration of one run, so
/// passing a window of snapshots from several runs averages over agents,
/// iterations and runs at once.
pub fn msd<'a, I>(snapshots: I, reference: &ModelVector) -> Result<f64>
where
    I: IntoIterator<Item = &'a [ModelVector]>,
{
    let mut total = 0.0;
    let mut count = 0usize;
    for snap in snapshots {
        for w in snap {
            if w.len() != reference.len() {
                return Err(Error::invalid("iterate dimension differs from reference"));
            }
            total += (reference - w).norm_squared();
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::invalid("msd needs a non-empty window"));
    }
    Ok(total / count as f64)
}

/// Number of final iterations in the steady-state window.
pub fn steady_state_window(iterations: usize) -> usize {
    ((iterations as f64 * STEADY_STATE_FRACTION).ceil() as usize).clamp(1, iterations.max(1))
}

/// Mean of the per-iteration MSD over the final window, averaged over runs.
/// A diverged run contributes `+∞`.
pub fn steady_state_msd(traces: &[Trace], iterations: usize) -> f64 {
    let window = steady_state_window(iterations);
    let per_run: Vec<f64> = traces
        .iter()
        .map(|t| {
            if t.diverged() || t.msd.len() < iterations {
                f64::INFINITY
            } else {
                window_mean(&t.msd, window)
            }
        })
        .collect();
    per_run.iter().sum::<f64>() / per_run.len().max(1) as f64
}

pub(crate) fn window_mean(xs: &[f64], window: usize) -> f64 {
    let tail = &xs[xs.len() - window.min(xs.len())..];
    tail.iter().sum::<f64>() / tail.len().max(1) as f64
}

/// `½ (w − minimizer)ᵀ H (w − minimizer)`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticCost {
    pub hessian: DMatrix<f64>,
    pub minimizer: ModelVector,
}

/// Minimizer of `Σ_k p_k J_k(w)`: `(Σ p_k H_k)⁻¹ Σ p_k H_k w_k^o`.
pub fn limit_point(costs: &[QuadraticCost], p: &PerronVector) -> Result<ModelVector> {
    if costs.is_empty() || costs.len() != p.len() {
        return Err(Error::invalid("need one cost per Perron entry"));
    }
    let dim = costs[0].minimizer.len();
    if costs
        .iter()
        .any(|c| c.minimizer.len() != dim || c.hessian.shape() != (dim, dim))
    {
        return Err(Error::invalid("cost dimensions disagree"));
    }
    let mut h = DMatrix::zeros(dim, dim);
    let mut rhs = ModelVector::zeros(dim);
    for (c, &pk) in costs.iter().zip(p.as_slice()) {
        h += &c.hessian * pk;
        rhs += &c.hessian * &c.minimizer * pk;
    }
    let svd = h.svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if smax.is_nan() || smax <= 0.0 || smin <= 1e-12 * smax {
        return Err(Error::SingularHessian);
    }
    svd.solve(&rhs, 0.0).map_err(|_| Error::SingularHessian)
}

/// Empirical moments of the gradient noise `s = ∇̂J_k(w) − ∇J_k(w)` at a fixed `w`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientNoiseStats {
    pub mean: ModelVector,
    pub second_moment: f64,
    /// `‖w_k^o − w‖²` at the evaluation point.
    pub deviation_sq: f64,
    pub samples: usize,
}

pub fn gradient_noise_stats<R: Rng + ?Sized>(
    task: &LinearModelTask,
    agent: usize,
    w: &ModelVector,
    samples: usize,
    rng: &mut R,
) -> GradientNoiseStats {
    let exact = task.true_gradient(agent, w);
    let mut mean = ModelVector::zeros(task.dim());
    let mut second = 0.0;
    for _ in 0..samples {
        let (u, d) = sample_data(task, agent, rng);
        let s = stochastic_gradient(w, &u, d) - &exact;
        second += s.norm_squared();
        mean += s;
    }
    let n = samples.max(1) as f64;
    GradientNoiseStats {
        mean: mean / n,
        second_moment: second / n,
        deviation_sq: (task.target(agent) - w).norm_squared(),
        samples,
    }
}

/// Smallest-intercept `(β², σ²)` with `second_moment ≤ β²·deviation + σ²` at
/// every point, slope taken from a least-squares fit.
pub fn fit_noise_bound(stats: &[GradientNoiseStats]) -> (f64, f64) {
    let n = stats.len() as f64;
    if stats.is_empty() {
        return (0.0, 0.0);
    }
    let mx = stats.iter().map(|s| s.deviation_sq).sum::<f64>() / n;
    let my = stats.iter().map(|s| s.second_moment).sum::<f64>() / n;
    let sxx: f64 = stats.iter().map(|s| (s.deviation_sq - mx).powi(2)).sum();
    let sxy: f64 = stats
        .iter()
        .map(|s| (s.deviation_sq - mx) * (s.second_moment - my))
        .sum();
    let beta2 = if sxx > 0.0 { (sxy / sxx).max(0.0) } else { 0.0 };
    let sigma2 = stats
        .iter()
        .map(|s| s.second_moment - beta2 * s.deviation_sq)
        .fold(0.0, f64::max);
    (beta2, sigma2)
}
