//! Weighted least squares and design-dependent covariance, with and without
//! sensor dropout.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, OedError, Result};
use crate::linalg::{information_matrix, InfoFactor, DEFAULT_RANK_EPS};
use crate::structural::FrfMatrix;

pub const DEFAULT_BINARY_TOL: f64 = 1e-6;
const BUDGET_SLACK: f64 = 1e-12;

/// Relaxed sensor design: weights in `[0, 1]`, per-sensor costs, budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Design {
    weights: Vec<f64>,
    costs: Vec<f64>,
    budget: f64,
}

impl Design {
    pub fn new(weights: Vec<f64>, costs: Vec<f64>, budget: f64) -> Result<Self> {
        check_len("design costs", weights.len(), costs.len())?;
        if let Some((i, w)) = weights
            .iter()
            .enumerate()
            .find(|(_, w)| !(**w >= 0.0 && **w <= 1.0))
        {
            return Err(OedError::InvalidConfig(format!(
                "weight {i} = {w} outside [0, 1]"
            )));
        }
        if let Some((i, c)) = costs
            .iter()
            .enumerate()
            .find(|(_, c)| !(**c > 0.0 && c.is_finite()))
        {
            return Err(OedError::InvalidConfig(format!(
                "cost {i} = {c} must be positive"
            )));
        }
        if !(budget > 0.0) || !budget.is_finite() {
            return Err(OedError::Infeasible(format!(
                "budget must be positive, got {budget}"
            )));
        }
        Ok(Self {
            weights,
            costs,
            budget,
        })
    }

    /// Unit costs.
    pub fn with_unit_costs(weights: Vec<f64>, budget: f64) -> Result<Self> {
        let n = weights.len();
        Self::new(weights, vec![1.0; n], budget)
    }

    /// `w_i = min(1, b / sum(c))`: interior, feasible, unbiased.
    pub fn uniform_feasible(costs: Vec<f64>, budget: f64) -> Result<Self> {
        let total: f64 = costs.iter().sum();
        let w = (budget / total).min(1.0);
        Self::new(vec![w; costs.len()], costs, budget)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
    pub fn costs(&self) -> &[f64] {
        &self.costs
    }
    pub fn budget(&self) -> f64 {
        self.budget
    }
    pub fn len(&self) -> usize {
        self.weights.len()
    }
    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Same costs and budget, new weights.
    pub fn with_weights(&self, weights: Vec<f64>) -> Result<Self> {
        Self::new(weights, self.costs.clone(), self.budget)
    }

    pub fn cost(&self) -> f64 {
        self.weights
            .iter()
            .zip(&self.costs)
            .map(|(w, c)| w * c)
            .sum()
    }

    pub fn feasible(&self) -> bool {
        self.cost() <= self.budget + BUDGET_SLACK
    }

    pub fn is_binary(&self) -> bool {
        self.is_binary_within(DEFAULT_BINARY_TOL)
    }

    pub fn is_binary_within(&self, tol: f64) -> bool {
        self.weights
            .iter()
            .all(|w| w.abs() <= tol || (1.0 - w).abs() <= tol)
    }

    /// Largest distance of any weight from {0, 1}.
    pub fn binary_distance(&self) -> f64 {
        self.weights
            .iter()
            .map(|w| w.min(1.0 - w))
            .fold(0.0, f64::max)
    }

    pub fn support(&self) -> Vec<usize> {
        self.weights
            .iter()
            .enumerate()
            .filter(|(_, w)| **w > 0.0)
            .map(|(i, _)| i)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    SurvivalProbabilities,
    DeterministicMasks,
}

/// Where a scenario set came from; carried into reports.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScenarioProvenance {
    pub generator: String,
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

/// A list of diagonal failure operators, each stored as its diagonal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSet {
    kind: ScenarioKind,
    n_sensors: usize,
    entries: Vec<Vec<f64>>,
    provenance: ScenarioProvenance,
}

impl ScenarioSet {
    pub fn new(
        kind: ScenarioKind,
        n_sensors: usize,
        entries: Vec<Vec<f64>>,
        provenance: ScenarioProvenance,
    ) -> Result<Self> {
        for (j, e) in entries.iter().enumerate() {
            check_len("scenario length", n_sensors, e.len())?;
            for (i, &v) in e.iter().enumerate() {
                let ok = match kind {
                    ScenarioKind::DeterministicMasks => v == 0.0 || v == 1.0,
                    ScenarioKind::SurvivalProbabilities => (0.0..=1.0).contains(&v),
                };
                if !ok {
                    return Err(OedError::InvalidConfig(format!(
                        "scenario {j}, sensor {i}: invalid entry {v} for {kind:?}"
                    )));
                }
            }
        }
        Ok(Self {
            kind,
            n_sensors,
            entries,
            provenance,
        })
    }

    pub fn masks(
        n_sensors: usize,
        entries: Vec<Vec<f64>>,
        generator: &str,
        seed: Option<u64>,
    ) -> Result<Self> {
        Self::new(
            ScenarioKind::DeterministicMasks,
            n_sensors,
            entries,
            ScenarioProvenance {
                generator: generator.to_string(),
                seed,
                config_hash: None,
            },
        )
    }

    /// The no-failure set: one all-ones mask.
    pub fn no_failure(n_sensors: usize) -> Self {
        Self::masks(n_sensors, vec![vec![1.0; n_sensors]], "no-failure", None)
            .expect("all-ones mask is valid")
    }

    pub fn kind(&self) -> ScenarioKind {
        self.kind
    }
    pub fn n_sensors(&self) -> usize {
        self.n_sensors
    }
    pub fn entries(&self) -> &[Vec<f64>] {
        &self.entries
    }
    pub fn len(&self) -> usize {
        self.entries.len()
    }
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
    pub fn provenance(&self) -> &ScenarioProvenance {
        &self.provenance
    }
    pub fn provenance_mut(&mut self) -> &mut ScenarioProvenance {
        &mut self.provenance
    }

    /// Fraction of scenarios in which each sensor is down (mask entry 0),
    /// or mean failure probability for survival vectors.
    pub fn failure_frequency(&self) -> Vec<f64> {
        let mut freq = vec![0.0; self.n_sensors];
        if self.entries.is_empty() {
            return freq;
        }
        for e in &self.entries {
            for (f, v) in freq.iter_mut().zip(e) {
                *f += 1.0 - v;
            }
        }
        let s = self.entries.len() as f64;
        freq.iter_mut().for_each(|f| *f /= s);
        freq
    }
}

/// Homoscedastic Gaussian noise, covariance `sigma^2 I`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    sigma: f64,
}

impl NoiseModel {
    pub fn new(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(OedError::InvalidConfig(format!(
                "noise sigma must be positive, got {sigma}"
            )));
        }
        Ok(Self { sigma })
    }
    pub fn sigma(&self) -> f64 {
        self.sigma
    }
    pub fn variance(&self) -> f64 {
        self.sigma * self.sigma
    }
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self { sigma: 1.0 }
    }
}

/// Per-sensor coefficient `m_i * w_i` with the optional mask/survival vector.
pub(crate) fn effective_weights(design: &Design, mask: Option<&[f64]>) -> Vec<f64> {
    match mask {
        Some(m) => design.weights.iter().zip(m).map(|(w, s)| w * s).collect(),
        None => design.weights.clone(),
    }
}

fn check_design(frf: &FrfMatrix, design: &Design, mask: Option<&[f64]>) -> Result<()> {
    check_len("design weights", frf.n_sensors(), design.len())?;
    if let Some(m) = mask {
        check_len("survival/mask vector", frf.n_sensors(), m.len())?;
        if let Some(v) = m.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(OedError::InvalidConfig(format!(
                "survival entry {v} outside [0, 1]"
            )));
        }
    }
    Ok(())
}

/// Linear map from the active observations to the WLS estimate, built once
/// from an SVD of the square-root-weighted system.
#[derive(Debug, Clone)]
pub struct WlsEstimator {
    active: Vec<usize>,
    gain: DMatrix<f64>,
}

impl WlsEstimator {
    pub fn new(frf: &FrfMatrix, design: &Design, mask: Option<&[f64]>) -> Result<Self> {
        check_design(frf, design, mask)?;
        let coeffs = effective_weights(design, mask);
        let t = frf.entries();
        let p = frf.n_params();
        let active: Vec<usize> = (0..coeffs.len()).filter(|&i| coeffs[i] > 0.0).collect();
        if active.len() < p {
            return Err(OedError::ill_posed(active.len(), p));
        }
        let sqrt_w: Vec<f64> = active.iter().map(|&i| coeffs[i].sqrt()).collect();
        let a = DMatrix::from_fn(active.len(), p, |r, c| sqrt_w[r] * t[(active[r], c)]);
        let svd = a.svd(true, true);
        let largest = svd.singular_values.max();
        let rank = svd
            .singular_values
            .iter()
            .filter(|s| **s > DEFAULT_RANK_EPS * largest)
            .count();
        if rank < p || !(largest > 0.0) {
            return Err(OedError::ill_posed(rank, p));
        }
        let u = svd.u.expect("requested U");
        let v_t = svd.v_t.expect("requested V^T");
        // gain = V S^-1 U^T diag(sqrt_w)
        let mut ut = u.transpose();
        for (k, s) in svd.singular_values.iter().enumerate() {
            ut.row_mut(k).scale_mut(1.0 / s);
        }
        for (r, sw) in sqrt_w.iter().enumerate() {
            ut.column_mut(r).scale_mut(*sw);
        }
        let gain = v_t.transpose() * ut;
        Ok(Self { active, gain })
    }

    pub fn active(&self) -> &[usize] {
        &self.active
    }

    /// `n_theta x n_active` gain applied to the active observations.
    pub fn gain(&self) -> &DMatrix<f64> {
        &self.gain
    }

    pub fn estimate(&self, data: &DVector<f64>) -> DVector<f64> {
        let y = DVector::from_iterator(self.active.len(), self.active.iter().map(|&i| data[i]));
        &self.gain * y
    }
}

pub fn wls_estimate(
    frf: &FrfMatrix,
    data: &DVector<f64>,
    design: &Design,
    mask: Option<&[f64]>,
) -> Result<DVector<f64>> {
    check_len("data", frf.n_sensors(), data.len())?;
    Ok(WlsEstimator::new(frf, design, mask)?.estimate(data))
}

fn scaled_inverse_information(
    frf: &FrfMatrix,
    coeffs: &[f64],
    noise: &NoiseModel,
) -> Result<DMatrix<f64>> {
    let m = information_matrix(frf.entries(), coeffs);
    let factor = InfoFactor::new(m, DEFAULT_RANK_EPS)?;
    Ok(factor.into_inverse() * noise.variance())
}

/// `sigma^2 (T^T W T)^{-1}`.
pub fn covariance(frf: &FrfMatrix, design: &Design, noise: &NoiseModel) -> Result<DMatrix<f64>> {
    check_design(frf, design, None)?;
    scaled_inverse_information(frf, design.weights(), noise)
}

/// `sigma^2 (sum_i s_i w_i T_i T_i^T)^{-1}`.
pub fn dropout_covariance(
    frf: &FrfMatrix,
    design: &Design,
    survival: &[f64],
    noise: &NoiseModel,
) -> Result<DMatrix<f64>> {
    check_design(frf, design, Some(survival))?;
    scaled_inverse_information(frf, &effective_weights(design, Some(survival)), noise)
}

/// Survival-weighted residual mean square with `n_eff - n_theta` degrees of
/// freedom, `n_eff` counting observations with `s_i w_i > 0`.
pub fn estimate_noise_variance(
    frf: &FrfMatrix,
    data: &DVector<f64>,
    design: &Design,
    survival: &[f64],
    theta_hat: &DVector<f64>,
) -> Result<f64> {
    check_design(frf, design, Some(survival))?;
    check_len("data", frf.n_sensors(), data.len())?;
    check_len("theta_hat", frf.n_params(), theta_hat.len())?;
    let coeffs = effective_weights(design, Some(survival));
    let n_eff = coeffs.iter().filter(|c| **c > 0.0).count();
    let p = frf.n_params();
    if n_eff <= p {
        return Err(OedError::InsufficientData {
            active: n_eff,
            required: p + 1,
        });
    }
    let pred = frf.entries() * theta_hat;
    let rss: f64 = coeffs
        .iter()
        .enumerate()
        .filter(|(_, c)| **c > 0.0)
        .map(|(i, c)| c * (data[i] - pred[i]).powi(2))
        .sum();
    Ok(rss / (n_eff - p) as f64)
}
