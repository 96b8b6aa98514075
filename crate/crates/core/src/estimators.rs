//! Robust location and scale estimation.
//!
//! Every scalar estimator here works on a [`WeightedSample`]: the values
//! `φ_ℓ(m)` reported by the neighbors of one agent for one coordinate, paired
//! with the combination weights `a_ℓk`. M-estimates are computed by the IRLS
//! fixed point
//!
//! ```text
//! w ← Σ_ℓ a_ℓ b((v_ℓ − w)/s) v_ℓ / Σ_ℓ a_ℓ b((v_ℓ − w)/s)
//! ```
//!
//! whose normalized weights are the effective combination weights returned in
//! [`LocationResult::final_weights`].
//!
//! All estimators first put the sample into a canonical order (by value, then
//! weight), so reordering the `(value, weight)` pairs never changes a result.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::ModelVector;

/// Tukey bisquare constant giving 95% Gaussian efficiency.
pub const TUKEY_C: f64 = 4.685;
/// Huber constant giving 95% Gaussian efficiency.
pub const HUBER_K: f64 = 1.345;
/// Makes the MAD a consistent estimate of σ under Gaussian data.
pub const MAD_CONSISTENCY: f64 = 1.4826;
/// Bound on `|Σ a ψ((v − w)/s)|` required before an IRLS result counts as converged.
pub const RESIDUAL_TOL: f64 = 1e-8;

const WEIGHT_SUM_TOL: f64 = 1e-12;
// cumulative weight within this of 1/2 counts as an exact split
const HALF_TOL: f64 = 1e-12;
// b(u) = 1/|u| for the absolute loss is capped at 1/L1_FLOOR
const L1_FLOOR: f64 = 1e-10;

/// Values with non-negative weights summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedSample {
    values: Vec<f64>,
    weights: Vec<f64>,
}

impl WeightedSample {
    pub fn new(values: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        validate_weights(&weights, values.len())?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("sample value"));
        }
        Ok(Self { values, weights })
    }

    /// Equal weights `1/n`.
    pub fn uniform(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("sample must contain at least one value"));
        }
        let w = 1.0 / values.len() as f64;
        let weights = vec![w; values.len()];
        Self::new(values, weights)
    }

    /// Caller guarantees the invariants (used on hot paths after a one-off check).
    pub(crate) fn from_parts_unchecked(values: Vec<f64>, weights: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), weights.len());
        Self { values, weights }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Weighted mean, accumulated in canonical order.
    pub fn weighted_mean(&self) -> f64 {
        let sorted = Canonical::of(self);
        sorted
            .values
            .iter()
            .zip(&sorted.weights)
            .map(|(v, w)| v * w)
            .sum()
    }
}

pub(crate) fn validate_weights(weights: &[f64], n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::invalid("sample must contain at least one value"));
    }
    if weights.len() != n {
        return Err(Error::invalid(format!(
            "{} values but {} weights",
            n,
            weights.len()
        )));
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::invalid("weights must be finite and non-negative"));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > WEIGHT_SUM_TOL {
        return Err(Error::invalid(format!(
            "weights sum to {total}, expected 1"
        )));
    }
    Ok(())
}

/// Sample sorted by (value, weight); `order[i]` is the original index of position `i`.
struct Canonical {
    values: Vec<f64>,
    weights: Vec<f64>,
    order: Vec<usize>,
}

impl Canonical {
    fn of(s: &WeightedSample) -> Self {
        Self::from_slices(&s.values, &s.weights)
    }

    fn from_slices(values: &[f64], weights: &[f64]) -> Self {
        let mut order: Vec<usize> = (0..values.len()).collect();
        order.sort_by(|&i, &j| {
            values[i]
                .total_cmp(&values[j])
                .then_with(|| weights[i].total_cmp(&weights[j]))
        });
        Self {
            values: order.iter().map(|&i| values[i]).collect(),
            weights: order.iter().map(|&i| weights[i]).collect(),
            order,
        }
    }

    /// Maps per-position quantities back to the caller's ordering.
    fn scatter(&self, sorted: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; sorted.len()];
        for (pos, &orig) in self.order.iter().enumerate() {
            out[orig] = sorted[pos];
        }
        out
    }
}

/// Which order statistic(s) the weighted median landed on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum MedianPick {
    Single(f64),
    Midpoint(f64, f64),
}

impl MedianPick {
    fn value(self) -> f64 {
        match self {
            MedianPick::Single(v) => v,
            MedianPick::Midpoint(lo, hi) => 0.5 * (lo + hi),
        }
    }
}

/// Weighted median of values already sorted ascending.
///
/// Returns the smallest value whose cumulative weight reaches 1/2. When the
/// cumulative weight hits 1/2 exactly, the midpoint with the next value of
/// positive weight is used instead, which reduces to the usual even-count
/// convention for uniform weights. Zero-weight entries never get selected.
fn median_sorted(values: &[f64], weights: &[f64]) -> MedianPick {
    let mut cum = 0.0;
    let mut last = values[values.len() - 1];
    for i in 0..values.len() {
        if weights[i] <= 0.0 {
            continue;
        }
        cum += weights[i];
        last = values[i];
        if cum >= 0.5 - HALF_TOL {
            if (cum - 0.5).abs() <= HALF_TOL {
                if let Some(j) = (i + 1..values.len()).find(|&j| weights[j] > 0.0) {
                    if values[j] != values[i] {
                        return MedianPick::Midpoint(values[i], values[j]);
                    }
                }
            }
            return MedianPick::Single(values[i]);
        }
    }
    MedianPick::Single(last)
}

pub fn weighted_median(s: &WeightedSample) -> f64 {
    let c = Canonical::of(s);
    median_sorted(&c.values, &c.weights).value()
}

/// Weighted median together with its effective weights: the mass of each
/// selected order statistic is spread over all entries sharing that value, in
/// proportion to their weights.
pub(crate) fn weighted_median_with_weights(s: &WeightedSample) -> (f64, Vec<f64>) {
    let c = Canonical::of(s);
    let pick = median_sorted(&c.values, &c.weights);
    let mut eff = vec![0.0; c.values.len()];
    let mut spread = |target: f64, mass: f64| {
        let total: f64 = c
            .values
            .iter()
            .zip(&c.weights)
            .filter(|(v, _)| **v == target)
            .map(|(_, w)| *w)
            .sum();
        for (pos, v) in c.values.iter().enumerate() {
            if *v == target && total > 0.0 {
                eff[pos] += mass * c.weights[pos] / total;
            }
        }
    };
    match pick {
        MedianPick::Single(v) => spread(v, 1.0),
        MedianPick::Midpoint(lo, hi) => {
            spread(lo, 0.5);
            spread(hi, 0.5);
        }
    }
    (pick.value(), c.scatter(&eff))
}

/// Normalized median absolute deviation about `center`.
pub fn weighted_mad(s: &WeightedSample, center: f64) -> Result<f64> {
    if !center.is_finite() {
        return Err(Error::NonFinite("MAD center"));
    }
    let dev: Vec<f64> = s.values.iter().map(|v| (v - center).abs()).collect();
    let c = Canonical::from_slices(&dev, &s.weights);
    Ok(MAD_CONSISTENCY * median_sorted(&c.values, &c.weights).value())
}

/// Loss family ρ with its tuning constant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossSpec {
    SquaredError,
    AbsoluteError,
    Huber { k: f64 },
    TukeyBisquare { c: f64 },
}

impl LossSpec {
    pub fn huber() -> Self {
        LossSpec::Huber { k: HUBER_K }
    }

    pub fn tukey() -> Self {
        LossSpec::TukeyBisquare { c: TUKEY_C }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            LossSpec::Huber { k: t } | LossSpec::TukeyBisquare { c: t }
                if !(t.is_finite() && t > 0.0) =>
            {
                Err(Error::invalid(format!(
                    "loss tuning constant must be > 0, got {t}"
                )))
            }
            _ => Ok(()),
        }
    }

    /// ψ = ρ′ on a standardized residual.
    pub fn psi(&self, u: f64) -> f64 {
        match *self {
            LossSpec::SquaredError => u,
            LossSpec::AbsoluteError => {
                if u > 0.0 {
                    1.0
                } else if u < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            LossSpec::Huber { k } => u.clamp(-k, k),
            LossSpec::TukeyBisquare { c } => {
                if u.abs() < c {
                    let t = 1.0 - (u / c).powi(2);
                    u * t * t
                } else {
                    0.0
                }
            }
        }
    }

    /// b(u) = ψ(u)/u, with ψ′(0) at the origin.
    pub fn weight(&self, u: f64) -> f64 {
        match *self {
            LossSpec::SquaredError => 1.0,
            LossSpec::AbsoluteError => 1.0 / u.abs().max(L1_FLOOR),
            LossSpec::Huber { k } => {
                let a = u.abs();
                if a <= k {
                    1.0
                } else {
                    k / a
                }
            }
            LossSpec::TukeyBisquare { c } => {
                if u.abs() < c {
                    let t = 1.0 - (u / c).powi(2);
                    t * t
                } else {
                    0.0
                }
            }
        }
    }
}

/// b-weight of the raw residual `y` standardized by `scale`.
pub fn b_weight(y: f64, scale: f64, loss: LossSpec) -> Result<f64> {
    if !y.is_finite() {
        return Err(Error::NonFinite("residual"));
    }
    if !(scale.is_finite() && scale > 0.0) {
        return Err(Error::invalid(format!(
            "scale must be positive, got {scale}"
        )));
    }
    loss.validate()?;
    Ok(loss.weight(y / scale))
}

/// Fixed-point iteration control.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IrlsSettings {
    pub max_iters: usize,
    /// Absolute change in the location between iterates.
    pub tol: f64,
    pub scale_floor: f64,
}

impl Default for IrlsSettings {
    fn default() -> Self {
        Self {
            max_iters: 100,
            tol: 1e-10,
            scale_floor: 1e-9,
        }
    }
}

impl IrlsSettings {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::invalid("max_iters must be >= 1"));
        }
        if !(self.tol.is_finite() && self.tol > 0.0) {
            return Err(Error::invalid("tol must be > 0"));
        }
        if !(self.scale_floor.is_finite() && self.scale_floor > 0.0) {
            return Err(Error::invalid("scale_floor must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocationResult {
    pub location: f64,
    /// Normalized effective weights in the caller's order. `location` equals
    /// their combination of the sample values.
    pub final_weights: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Scale the residuals were standardized by.
    pub scale: f64,
}

/// `Σ a ψ((v − w)/s)`, the estimating equation an M-estimate solves.
pub fn fixed_point_residual(s: &WeightedSample, loss: LossSpec, scale: f64, location: f64) -> f64 {
    let c = Canonical::of(s);
    residual_sorted(&c, loss, scale, location)
}

fn residual_sorted(c: &Canonical, loss: LossSpec, scale: f64, location: f64) -> f64 {
    c.values
        .iter()
        .zip(&c.weights)
        .map(|(v, a)| a * loss.psi((v - location) / scale))
        .sum()
}

/// IRLS M-estimate of location with a fixed scale.
///
/// Converged means the location moved by at most `cfg.tol` in the last step
/// and the estimating-equation residual is within [`RESIDUAL_TOL`]. When
/// `max_iters` runs out the last iterate is returned with `converged = false`.
pub fn m_estimate(
    s: &WeightedSample,
    loss: LossSpec,
    scale: f64,
    init: f64,
    cfg: &IrlsSettings,
) -> Result<LocationResult> {
    cfg.validate()?;
    loss.validate()?;
    if !scale.is_finite() || scale < cfg.scale_floor {
        return Err(Error::invalid(format!(
            "scale {scale} is below the floor {}",
            cfg.scale_floor
        )));
    }
    if !init.is_finite() {
        return Err(Error::NonFinite("initial location"));
    }

    let c = Canonical::of(s);
    let n = c.values.len();
    let mut b = vec![0.0; n];
    let mut location = init;
    let mut iterations = 0;
    let mut converged = false;

    for it in 1..=cfg.max_iters {
        iterations = it;
        let mut den = 0.0;
        let mut num = 0.0;
        for ((slot, &v), &a) in b.iter_mut().zip(&c.values).zip(&c.weights) {
            let bi = a * loss.weight((v - location) / scale);
            *slot = bi;
            den += bi;
            num += bi * v;
        }
        if den <= 0.0 {
            return Err(Error::DegenerateWeights {
                iteration: it,
                location,
                scale,
            });
        }
        let next = num / den;
        for bi in &mut b {
            *bi /= den;
        }
        let change = (next - location).abs();
        location = next;
        if change <= cfg.tol && residual_sorted(&c, loss, scale, location).abs() <= RESIDUAL_TOL {
            converged = true;
            break;
        }
    }

    Ok(LocationResult {
        location,
        final_weights: c.scatter(&b),
        iterations,
        converged,
        scale,
    })
}

/// MM-estimate: M-estimation started at the weighted median and standardized
/// by the (floored) weighted MAD about it.
pub fn mm_estimate(
    s: &WeightedSample,
    loss: LossSpec,
    cfg: &IrlsSettings,
) -> Result<LocationResult> {
    cfg.validate()?;
    let center = weighted_median(s);
    let scale = weighted_mad(s, center)?.max(cfg.scale_floor);
    m_estimate(s, loss, scale, center, cfg)
}

/// Number of points cut from each tail.
fn trim_count(trim_fraction: f64, n: usize) -> usize {
    // 1e-9 slack keeps e.g. 0.2 * 5 from rounding up to 2
    ((trim_fraction * n as f64) - 1e-9).ceil().max(0.0) as usize
}

pub(crate) fn trimmed_mean_with_weights(
    s: &WeightedSample,
    trim_fraction: f64,
) -> Result<(f64, Vec<f64>)> {
    if !(0.0..0.5).contains(&trim_fraction) {
        return Err(Error::invalid(format!(
            "trim fraction must lie in [0, 0.5), got {trim_fraction}"
        )));
    }
    let n = s.len();
    let g = trim_count(trim_fraction, n);
    if n <= 2 * g {
        return Err(Error::invalid(format!(
            "trimming {g} points from each tail of {n} leaves nothing"
        )));
    }
    let c = Canonical::of(s);
    let kept = g..n - g;
    let total: f64 = c.weights[kept.clone()].iter().sum();
    if total <= 0.0 {
        return Err(Error::invalid("trimmed sample carries no weight"));
    }
    let mut eff = vec![0.0; n];
    let mut mean = 0.0;
    for pos in kept {
        eff[pos] = c.weights[pos] / total;
        mean += eff[pos] * c.values[pos];
    }
    Ok((mean, c.scatter(&eff)))
}

/// Weighted mean after removing `⌈trim_fraction · n⌉` points from each tail.
pub fn trimmed_mean(s: &WeightedSample, trim_fraction: f64) -> Result<f64> {
    trimmed_mean_with_weights(s, trim_fraction).map(|(m, _)| m)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeometricMedian {
    pub point: ModelVector,
    /// Vector-level Weiszfeld weights `a_ℓ/‖v_ℓ − w‖`, normalized.
    pub weights: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Weighted geometric median by Weiszfeld iteration, started from the
/// coordinate-wise weighted median.
///
/// When an iterate comes within `tol/2` of a data point the subgradient
/// optimality condition is checked there: if it holds the data point is
/// returned, otherwise the iterate is pushed off by `tol` along the descent
/// direction.
pub fn weiszfeld(
    points: &[ModelVector],
    weights: &[f64],
    cfg: &IrlsSettings,
) -> Result<GeometricMedian> {
    cfg.validate()?;
    validate_weights(weights, points.len())?;
    let dim = points[0].len();
    if dim == 0 {
        return Err(Error::invalid("points must have at least one coordinate"));
    }
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::invalid("points have mismatched dimensions"));
    }
    if points.iter().any(|p| p.iter().any(|x| !x.is_finite())) {
        return Err(Error::NonFinite("point coordinate"));
    }

    // canonical order: lexicographic on coordinates, then weight
    let mut order: Vec<usize> = (0..points.len()).filter(|&i| weights[i] > 0.0).collect();
    order.sort_by(|&i, &j| {
        points[i]
            .iter()
            .zip(points[j].iter())
            .map(|(a, b)| a.total_cmp(b))
            .find(|o| *o != Ordering::Equal)
            .unwrap_or(Ordering::Equal)
            .then_with(|| weights[i].total_cmp(&weights[j]))
    });
    let pts: Vec<&ModelVector> = order.iter().map(|&i| &points[i]).collect();
    let a: Vec<f64> = order.iter().map(|&i| weights[i]).collect();
    let n = pts.len();

    let scatter = |eff: &[f64]| {
        let mut out = vec![0.0; points.len()];
        for (pos, &orig) in order.iter().enumerate() {
            out[orig] = eff[pos];
        }
        out
    };

    let mut w = ModelVector::from_fn(dim, |m, _| {
        let vals: Vec<f64> = pts.iter().map(|p| p[m]).collect();
        let c = Canonical::from_slices(&vals, &a);
        median_sorted(&c.values, &c.weights).value()
    });
    let mut eff = vec![0.0; n];
    let mut dist = vec![0.0; n];
    let coincide = 0.5 * cfg.tol;

    for it in 1..=cfg.max_iters {
        for i in 0..n {
            dist[i] = (pts[i] - &w).norm();
        }
        let nearest = (0..n)
            .min_by(|&i, &j| dist[i].total_cmp(&dist[j]))
            .expect("at least one point");
        if dist[nearest] <= coincide {
            let anchor = pts[nearest];
            let mut anchor_mass = 0.0;
            let mut pull = ModelVector::zeros(dim);
            for i in 0..n {
                let d = (pts[i] - anchor).norm();
                if d == 0.0 {
                    anchor_mass += a[i];
                } else {
                    pull += (pts[i] - anchor) * (a[i] / d);
                }
            }
            let pull_norm = pull.norm();
            if pull_norm <= anchor_mass {
                for i in 0..n {
                    eff[i] = if pts[i] == anchor {
                        a[i] / anchor_mass
                    } else {
                        0.0
                    };
                }
                return Ok(GeometricMedian {
                    point: anchor.clone(),
                    weights: scatter(&eff),
                    iterations: it,
                    converged: true,
                });
            }
            w = anchor + pull * (cfg.tol / pull_norm);
            continue;
        }

        let mut den = 0.0;
        let mut next = ModelVector::zeros(dim);
        for i in 0..n {
            let inv = a[i] / dist[i];
            eff[i] = inv;
            den += inv;
            next += pts[i] * inv;
        }
        next /= den;
        for e in &mut eff {
            *e /= den;
        }
        let change = (&next - &w).norm();
        w = next;
        if change <= cfg.tol {
            return Ok(GeometricMedian {
                point: w,
                weights: scatter(&eff),
                iterations: it,
                converged: true,
            });
        }
    }

    Ok(GeometricMedian {
        point: w,
        weights: scatter(&eff),
        iterations: cfg.max_iters,
        converged: false,
    })
}
