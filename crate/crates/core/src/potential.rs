//! Smoothed objective, global utility, the normalizer `P`, wonderful-life
//! local utilities and the exact potential `φ = U / P`.
//!
//! Raw utilities grow like `e^{β/ε}` and overflow quickly for small `ε`.
//! [`local_utility`] and [`potential`] are therefore evaluated with every
//! exponent shifted by `β_max`, which is exactly the `e^{β_max/ε}` factor of
//! `P`; [`global_utility`] and [`marginal_contribution`] return the raw
//! values and may saturate.

use crate::error::{Error, Result};
use crate::model::{remaining_loads, AllocationFile, Minutes, SatelliteId, StageState};

/// Smallest gain in (satellite-normalized) local utility that counts as an
/// improvement. Smaller differences are treated as ties.
pub const IMPROVEMENT_TOLERANCE: f64 = 1e-12;

/// Smoothing temperature `ε` of the log-sum-exp approximation.
#[derive(Copy, Clone, Debug, PartialEq)]
pub struct SmoothingParams {
    epsilon: f64,
}

impl SmoothingParams {
    pub fn new(epsilon: f64) -> Result<Self> {
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return Err(Error::validation("epsilon", format!("must be positive and finite, got {epsilon}")));
        }
        Ok(Self { epsilon })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }
}

/// `ε·log Σ e^{v/ε}`, shifted by the maximum so that it never overflows.
pub fn smooth_max(values: &[f64], epsilon: f64) -> f64 {
    let top = crate::model::max_of(values);
    if !top.is_finite() {
        return top;
    }
    let sum: f64 = values.iter().map(|v| ((v - top) / epsilon).exp()).sum();
    top + epsilon * sum.ln()
}

/// `h(x) = ε·log Σ_j e^{(β_j − α_j^T x)/ε}`.
pub fn smooth_objective(stage: &StageState, a: &AllocationFile, smoothing: SmoothingParams) -> Result<f64> {
    stage.check_feasible(a)?;
    Ok(smooth_max(&remaining_loads(stage, a), smoothing.epsilon()))
}

/// `U = −Σ_j e^{(β_j − α_j^T x)/ε}`. Saturates to `-inf` once the largest
/// exponent passes ~709; use [`smooth_objective`] (`h = ε·ln(−U)`) there.
pub fn global_utility(stage: &StageState, a: &AllocationFile, smoothing: SmoothingParams) -> Result<f64> {
    stage.check_feasible(a)?;
    let eps = smoothing.epsilon();
    Ok(-remaining_loads(stage, a).iter().map(|y| (y / eps).exp()).sum::<f64>())
}

/// The normalizer `P = N_max·(1 − e^{−t·α_max/ε})·e^{β_max/ε}` with `t = Δt`.
#[derive(Copy, Clone, Debug, PartialEq)]
pub struct Normalizer {
    pub alpha_max: f64,
    pub beta_max: f64,
    pub n_max: usize,
    pub budget: Minutes,
    pub epsilon: f64,
}

impl Normalizer {
    /// `P` itself; infinite when `β_max/ε` is beyond the f64 range.
    pub fn value(&self) -> f64 {
        self.log_value().exp()
    }

    pub fn log_value(&self) -> f64 {
        (self.n_max as f64).ln() + self.capacity_factor().ln() + self.beta_max / self.epsilon
    }

    /// `N_max·(1 − e^{−t·α_max/ε})`, i.e. `P / e^{β_max/ε}`.
    pub fn reduced(&self) -> f64 {
        self.n_max as f64 * self.capacity_factor()
    }

    fn capacity_factor(&self) -> f64 {
        -(-(self.budget as f64) * self.alpha_max / self.epsilon).exp_m1()
    }
}

/// Largest number of grids any satellite can open in `stage`.
pub fn max_support_size(stage: &StageState) -> usize {
    let c = stage.transition_constant();
    stage
        .satellites()
        .map(|i| {
            let per_grid = 1 + c;
            let by_budget = (stage.budget(i) / per_grid) as usize;
            by_budget.min(stage.visible_grids(i).len())
        })
        .max()
        .unwrap_or(0)
}

pub fn normalizer(stage: &StageState, smoothing: SmoothingParams) -> Result<Normalizer> {
    let n_max = max_support_size(stage);
    if stage.is_idle() || n_max == 0 {
        return Err(Error::DegenerateStage { stage: stage.index() });
    }
    let alpha_max = stage.satellites().flat_map(|i| stage.visible_grids(i).iter().map(|&(_, a)| a)).fold(f64::NEG_INFINITY, f64::max);
    let beta_max = crate::model::max_of(stage.beta());
    Ok(Normalizer { alpha_max, beta_max, n_max, budget: stage.length(), epsilon: smoothing.epsilon() })
}

/// Work delivered to each grid by every satellite except `i`.
pub(crate) fn served_by_others(stage: &StageState, a: &AllocationFile, i: SatelliteId) -> Vec<f64> {
    let mut served = vec![0.0; stage.grid_count()];
    for action in a.iter().filter(|act| act.owner() != i) {
        for &(j, x) in action.entries() {
            served[j.0] += stage.alpha(action.owner(), j).unwrap_or(0.0) * x as f64;
        }
    }
    served
}

/// Wonderful-life marginal `U(a_i, a_−i) − U(a_i^0, a_−i)`, unnormalized.
pub fn marginal_contribution(stage: &StageState, a: &AllocationFile, i: SatelliteId, smoothing: SmoothingParams) -> Result<f64> {
    stage.check_feasible(a)?;
    let eps = smoothing.epsilon();
    let others = served_by_others(stage, a, i);
    let mut total = 0.0;
    for &(j, x) in a.action(i).entries() {
        let own = stage.alpha(i, j).unwrap_or(0.0) * x as f64;
        let beta = stage.beta()[j.0];
        total += ((beta - others[j.0]) / eps).exp() - ((beta - others[j.0] - own) / eps).exp();
    }
    Ok(total)
}

/// `U_i = marginal / P`, evaluated in the `β_max`-shifted frame.
pub fn local_utility(stage: &StageState, a: &AllocationFile, i: SatelliteId, smoothing: SmoothingParams) -> Result<f64> {
    stage.check_feasible(a)?;
    let norm = normalizer(stage, smoothing)?;
    let eps = smoothing.epsilon();
    let others = served_by_others(stage, a, i);
    let mut total = 0.0;
    for &(j, x) in a.action(i).entries() {
        let own = stage.alpha(i, j).unwrap_or(0.0) * x as f64;
        let headroom = stage.beta()[j.0] - others[j.0] - norm.beta_max;
        total += (headroom / eps).exp() * -(-own / eps).exp_m1();
    }
    Ok(total / norm.reduced())
}

/// `φ(a) = U(a) / P`. Negative; larger is better.
pub fn potential(stage: &StageState, a: &AllocationFile, smoothing: SmoothingParams) -> Result<f64> {
    stage.check_feasible(a)?;
    let norm = normalizer(stage, smoothing)?;
    Ok(potential_from_remaining(&remaining_loads(stage, a), &norm))
}

pub(crate) fn potential_from_remaining(remaining: &[f64], norm: &Normalizer) -> f64 {
    let eps = norm.epsilon;
    let sum: f64 = remaining.iter().map(|y| ((y - norm.beta_max) / eps).exp()).sum();
    -sum / norm.reduced()
}

/// `1 − e^{−x·α_k/ε}` for every capacity `α_k` and `x = 0..=max_minutes`,
/// laid out row by row.
pub fn capacity_factors(alpha: &[f64], max_minutes: Minutes, epsilon: f64) -> Vec<f64> {
    let stride = max_minutes as usize + 1;
    let mut factors = vec![0.0; alpha.len() * stride];
    for (k, &al) in alpha.iter().enumerate() {
        for x in 1..stride {
            factors[k * stride + x] = -(-(x as f64) * al / epsilon).exp_m1();
        }
    }
    factors
}

/// Scores actions of one satellite against a fixed `a_−i`.
///
/// The score is `U_i` multiplied by a positive factor that depends only on
/// `a_−i`: exponents are shifted by the largest residual load the satellite
/// can see, so the best single-grid term is of order one. Comparisons against
/// [`IMPROVEMENT_TOLERANCE`] happen on this scale.
#[derive(Clone, Debug)]
pub struct ReplyScorer {
    table: Vec<f64>,
    stride: usize,
    log_scale: f64,
}

impl ReplyScorer {
    /// `residual[k]` is `β_j − Σ_{i'≠i} α_{i'j} x_{i'j}` for the satellite's
    /// k-th visible grid, `alpha[k]` its capacity there; minutes range over
    /// `0..=max_minutes`.
    pub fn new(residual: &[f64], alpha: &[f64], max_minutes: Minutes, norm: &Normalizer) -> Self {
        let factors = capacity_factors(alpha, max_minutes, norm.epsilon);
        Self::from_factors(residual, &factors, max_minutes, norm)
    }

    /// Like [`ReplyScorer::new`] with the output of [`capacity_factors`]
    /// precomputed for the same `ε`.
    pub fn from_factors(residual: &[f64], factors: &[f64], max_minutes: Minutes, norm: &Normalizer) -> Self {
        let eps = norm.epsilon;
        let stride = max_minutes as usize + 1;
        debug_assert_eq!(factors.len(), residual.len() * stride);
        let shift = crate::model::max_of(residual);
        let mut table = vec![0.0; residual.len() * stride];
        for (k, &y) in residual.iter().enumerate() {
            let weight = ((y - shift) / eps).exp();
            let row = k * stride..(k + 1) * stride;
            for (cell, f) in table[row.clone()].iter_mut().zip(&factors[row]) {
                *cell = weight * f;
            }
        }
        let log_scale = if residual.is_empty() { 0.0 } else { (shift - norm.beta_max) / eps - norm.reduced().ln() };
        Self { table, stride, log_scale }
    }

    /// Score of an allocation given as (visible position, minutes) pairs.
    #[inline]
    pub fn score(&self, entries: &[(u16, Minutes)]) -> f64 {
        entries.iter().map(|&(k, x)| self.table[k as usize * self.stride + x as usize]).sum()
    }

    /// `ln` of the factor mapping a score back to `U_i`.
    pub fn log_scale(&self) -> f64 {
        self.log_scale
    }

    pub fn local_utility(&self, entries: &[(u16, Minutes)]) -> f64 {
        self.score(entries) * self.log_scale.exp()
    }
}
