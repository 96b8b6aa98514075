//! Neighborhood aggregation rules.
//!
//! Each rule maps the neighbor models `{φ_ℓ}` and combination weights
//! `{a_ℓk}` of one agent to an aggregate `w_k` plus effective weights
//! `ā_ℓk(m)` such that `w_k(m) = Σ_ℓ ā_ℓk(m) φ_ℓ(m)`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::estimators::{
    self, m_estimate, mm_estimate, weighted_median, weiszfeld, IrlsSettings, LossSpec,
    WeightedSample,
};
use crate::ModelVector;

#[derive(Debug, Clone, PartialEq)]
pub enum AggregatorSpec {
    /// `Σ_ℓ a_ℓk φ_ℓ`.
    Mean,
    CoordinateMedian,
    TrimmedMean {
        trim_fraction: f64,
    },
    /// Weighted geometric (spatial) median over whole vectors.
    GeometricMedian {
        irls: IrlsSettings,
    },
    /// Coordinate-wise M-estimate with a fixed scale, started at the weighted median.
    MEstimator {
        loss: LossSpec,
        scale: f64,
        irls: IrlsSettings,
    },
    /// Coordinate-wise MM-estimate (median/MAD start and scale).
    MMEstimator {
        loss: LossSpec,
        irls: IrlsSettings,
    },
}

impl AggregatorSpec {
    /// MM with Tukey's bisquare and default IRLS settings.
    pub fn mm_tukey() -> Self {
        AggregatorSpec::MMEstimator {
            loss: LossSpec::tukey(),
            irls: IrlsSettings::default(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            AggregatorSpec::Mean => "mean",
            AggregatorSpec::CoordinateMedian => "coordinate_median",
            AggregatorSpec::TrimmedMean { .. } => "trimmed_mean",
            AggregatorSpec::GeometricMedian { .. } => "geometric_median",
            AggregatorSpec::MEstimator { .. } => "m_estimator",
            AggregatorSpec::MMEstimator { .. } => "mm_estimator",
        }
    }

    /// True when coordinate m of the output depends only on coordinate m of the inputs.
    pub fn is_coordinatewise(&self) -> bool {
        !matches!(self, AggregatorSpec::GeometricMedian { .. })
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            AggregatorSpec::Mean | AggregatorSpec::CoordinateMedian => Ok(()),
            AggregatorSpec::TrimmedMean { trim_fraction } => {
                if (0.0..0.5).contains(trim_fraction) {
                    Ok(())
                } else {
                    Err(Error::invalid(format!(
                        "trim fraction must lie in [0, 0.5), got {trim_fraction}"
                    )))
                }
            }
            AggregatorSpec::GeometricMedian { irls } => irls.validate(),
            AggregatorSpec::MEstimator { loss, scale, irls } => {
                loss.validate()?;
                irls.validate()?;
                if !scale.is_finite() || *scale < irls.scale_floor {
                    return Err(Error::invalid(format!(
                        "M-estimator scale {scale} is below the floor {}",
                        irls.scale_floor
                    )));
                }
                Ok(())
            }
            AggregatorSpec::MMEstimator { loss, irls } => {
                loss.validate()?;
                irls.validate()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregationOutput {
    pub model: ModelVector,
    /// One row per neighbor, one column per coordinate. For the geometric
    /// median every column repeats the single vector-level weight.
    pub effective_weights: DMatrix<f64>,
    /// Coordinates whose estimator reported convergence (all or nothing for
    /// the geometric median; always all for closed-form rules).
    pub converged_coords: usize,
}

pub fn aggregate(
    neighbors: &[&ModelVector],
    weights: &[f64],
    spec: &AggregatorSpec,
) -> Result<AggregationOutput> {
    spec.validate()?;
    estimators::validate_weights(weights, neighbors.len())?;
    let dim = neighbors[0].len();
    if dim == 0 {
        return Err(Error::invalid(
            "model vectors must have at least one coordinate",
        ));
    }
    if let Some(bad) = neighbors.iter().position(|v| v.len() != dim) {
        return Err(Error::invalid(format!(
            "neighbor {bad} has length {}, expected {dim}",
            neighbors[bad].len()
        )));
    }
    if neighbors.iter().any(|v| v.iter().any(|x| !x.is_finite())) {
        return Err(Error::NonFinite("neighbor model"));
    }
    let n = neighbors.len();

    match spec {
        AggregatorSpec::Mean => {
            let mut model = ModelVector::zeros(dim);
            for (v, &a) in neighbors.iter().zip(weights) {
                model.axpy(a, v, 1.0);
            }
            let eff = DMatrix::from_fn(n, dim, |l, _| weights[l]);
            Ok(AggregationOutput {
                model,
                effective_weights: eff,
                converged_coords: dim,
            })
        }
        AggregatorSpec::GeometricMedian { irls } => {
            let owned: Vec<ModelVector> = neighbors.iter().map(|v| (*v).clone()).collect();
            let g = weiszfeld(&owned, weights, irls)?;
            let eff = DMatrix::from_fn(n, dim, |l, _| g.weights[l]);
            Ok(AggregationOutput {
                model: g.point,
                effective_weights: eff,
                converged_coords: if g.converged { dim } else { 0 },
            })
        }
        _ => {
            let mut model = ModelVector::zeros(dim);
            let mut eff = DMatrix::zeros(n, dim);
            let mut converged = 0;
            for m in 0..dim {
                let values: Vec<f64> = neighbors.iter().map(|v| v[m]).collect();
                let sample = WeightedSample::from_parts_unchecked(values, weights.to_vec());
                let (loc, w, ok) =
                    aggregate_coordinate(&sample, spec).map_err(|e| e.at_coordinate(m))?;
                model[m] = loc;
                eff.set_column(m, &nalgebra::DVector::from_vec(w));
                converged += usize::from(ok);
            }
            Ok(AggregationOutput {
                model,
                effective_weights: eff,
                converged_coords: converged,
            })
        }
    }
}

fn aggregate_coordinate(
    s: &WeightedSample,
    spec: &AggregatorSpec,
) -> Result<(f64, Vec<f64>, bool)> {
    match spec {
        AggregatorSpec::CoordinateMedian => {
            let (v, w) = estimators::weighted_median_with_weights(s);
            Ok((v, w, true))
        }
        AggregatorSpec::TrimmedMean { trim_fraction } => {
            let (v, w) = estimators::trimmed_mean_with_weights(s, *trim_fraction)?;
            Ok((v, w, true))
        }
        AggregatorSpec::MEstimator { loss, scale, irls } => {
            let r = m_estimate(s, *loss, *scale, weighted_median(s), irls)?;
            Ok((r.location, r.final_weights, r.converged))
        }
        AggregatorSpec::MMEstimator { loss, irls } => {
            let r = mm_estimate(s, *loss, irls)?;
            Ok((r.location, r.final_weights, r.converged))
        }
        AggregatorSpec::Mean | AggregatorSpec::GeometricMedian { .. } => {
            unreachable!("handled as whole-vector rules")
        }
    }
}

/// Effective weight mass on the listed neighbors, averaged over coordinates.
pub fn effective_weight_summary(out: &AggregationOutput, neighbor_indices: &[usize]) -> f64 {
    let cols = out.effective_weights.ncols();
    if cols == 0 {
        return 0.0;
    }
    neighbor_indices
        .iter()
        .filter(|&&l| l < out.effective_weights.nrows())
        .map(|&l| out.effective_weights.row(l).sum())
        .sum::<f64>()
        / cols as f64
}
