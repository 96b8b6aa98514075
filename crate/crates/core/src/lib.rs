//! Robust-and-efficient aggregation for decentralized diffusion learning.
//!
//! The crate is organised bottom-up:
//!
//! - [`estimators`]: scalar location/scale estimators (weighted median, MAD,
//!   IRLS M-estimation, MM-estimation, trimmed mean) and the Weiszfeld
//!   geometric median.
//! - [`aggregate`]: per-neighborhood aggregation rules built on the
//!   estimators, returning the aggregate plus per-coordinate effective
//!   combination weights.
//! - [`network`]: topologies, left-stochastic combination matrices, the
//!   contamination/connectivity check and Perron vectors.
//! - [`simulate`]: the adapt-then-combine loop on a streaming linear
//!   regression task with optional malicious agents.

pub mod aggregate;
pub mod error;
pub mod estimators;
pub mod network;
pub mod simulate;

pub use aggregate::{aggregate, effective_weight_summary, AggregationOutput, AggregatorSpec};
pub use error::{Error, Result};
pub use estimators::{
    b_weight, fixed_point_residual, m_estimate, mm_estimate, trimmed_mean, weighted_mad,
    weighted_median, weiszfeld, GeometricMedian, IrlsSettings, LocationResult, LossSpec,
    WeightedSample,
};
pub use network::{
    benign_reduced_matrix, build_topology, perron_vector, uniform_combination,
    validate_assumption1, Assumption1Report, BenignReduced, CombinationMatrix, PerronVector,
    Topology, TopologyKind,
};
pub use simulate::{
    adapt_step, agent_rng, apply_attack, fit_noise_bound, gradient_noise_stats, limit_point, msd,
    run_diffusion, sample_data, steady_state_msd, steady_state_window, stochastic_gradient,
    AttackSpec, DiffusionProblem, DivergenceEvent, GradientNoiseStats, LinearModelTask,
    QuadraticCost, RunSettings, Trace, WindowProfile,
};

/// Length-M model vector (w, φ, w^o).
pub type ModelVector = nalgebra::DVector<f64>;
