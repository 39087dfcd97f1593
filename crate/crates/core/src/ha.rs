//! Appendix comparators: Monte Carlo non-asymptotic covariance and the
//! truncated series for `E[det(T^T D T)^(1/n_theta)]`.

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, OedError, Result};
use crate::inverse::{Design, NoiseModel};
use crate::linalg::{
    add_rank_one, information_matrix, symmetrize_upper, InfoFactor, DEFAULT_RANK_EPS,
};
use crate::rng::{stream_rng, STREAM_MC_MASK};
use crate::scenarios::{binomial, for_each_combination, SCENARIO_GUARD};
use crate::structural::FrfMatrix;

const MIN_ACCEPTANCE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HAConfig {
    pub q: f64,
    pub truncation_order: usize,
    pub mc_samples: usize,
    pub seed: u64,
}

impl HAConfig {
    fn validate(&self, n: usize, p: usize) -> Result<()> {
        if !(0.0..=1.0).contains(&self.q) {
            return Err(OedError::InvalidConfig(format!(
                "q = {} outside [0, 1]",
                self.q
            )));
        }
        if n < p || self.truncation_order > n - p {
            return Err(OedError::InvalidConfig(format!(
                "truncation order {} exceeds support size {n} minus n_theta {p}",
                self.truncation_order
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct McCovariance {
    pub mean: DMatrix<f64>,
    pub std_err: DMatrix<f64>,
    pub accepted: usize,
    pub rejected: usize,
}

impl McCovariance {
    pub fn acceptance_rate(&self) -> f64 {
        self.accepted as f64 / (self.accepted + self.rejected) as f64
    }
}

/// `sigma^2 / N * sum_n (T^T W Xi_n T)^{-1}` over `n_mc` accepted masks,
/// where `Xi_n` keeps sensor `i` with probability `survival[i]`.
pub fn non_asymptotic_covariance_mc(
    frf: &FrfMatrix,
    design: &Design,
    survival: &[f64],
    noise: &NoiseModel,
    n_mc: usize,
    seed: u64,
) -> Result<McCovariance> {
    let n = frf.n_sensors();
    check_len("design weights", n, design.len())?;
    check_len("survival", n, survival.len())?;
    if n_mc == 0 {
        return Err(OedError::InvalidConfig("n_mc must be at least 1".into()));
    }
    let p = frf.n_params();
    let w = design.weights();
    let draw = |k: usize| -> Option<DMatrix<f64>> {
        let mut rng = stream_rng(seed, STREAM_MC_MASK, k as u64);
        let coeffs: Vec<f64> = w
            .iter()
            .zip(survival)
            .map(|(wi, si)| if rng.random::<f64>() < *si { *wi } else { 0.0 })
            .collect();
        InfoFactor::new(information_matrix(frf.entries(), &coeffs), DEFAULT_RANK_EPS)
            .ok()
            .map(InfoFactor::into_inverse)
    };

    let max_attempts = ((n_mc as f64 / MIN_ACCEPTANCE).ceil() as usize).max(n_mc);
    let mut sum = DMatrix::zeros(p, p);
    let mut sum_sq = DMatrix::zeros(p, p);
    let mut accepted = 0;
    let mut attempts = 0;
    while accepted < n_mc && attempts < max_attempts {
        let batch = (n_mc - accepted).max(64).min(max_attempts - attempts);
        let results: Vec<Option<DMatrix<f64>>> = (attempts..attempts + batch)
            .into_par_iter()
            .map(draw)
            .collect();
        for inv in results.into_iter() {
            attempts += 1;
            if let Some(inv) = inv {
                sum_sq += inv.component_mul(&inv);
                sum += inv;
                accepted += 1;
                if accepted == n_mc {
                    break;
                }
            }
        }
    }
    let rejected = attempts - accepted;
    if accepted < n_mc {
        return Err(OedError::LowAcceptance {
            rate: accepted as f64 / attempts as f64,
        });
    }
    let nf = accepted as f64;
    let mean = &sum / nf;
    let var =
        (&sum_sq / nf - mean.component_mul(&mean)).map(|v| v.max(0.0)) * (nf / (nf - 1.0).max(1.0));
    let s2 = noise.variance();
    Ok(McCovariance {
        mean: mean * s2,
        std_err: var.map(|v| v.sqrt() / nf.sqrt()) * s2,
        accepted,
        rejected,
    })
}

/// Rows of the design support, each with unit weight.
fn support_rows(frf: &FrfMatrix, design: &Design) -> Result<DMatrix<f64>> {
    check_len("design weights", frf.n_sensors(), design.len())?;
    let support = design.support();
    let t = frf.entries();
    Ok(DMatrix::from_fn(support.len(), t.ncols(), |r, c| {
        t[(support[r], c)]
    }))
}

fn det_root(gram: &DMatrix<f64>, p: usize) -> f64 {
    let d = gram.clone().lu().determinant();
    if d > 0.0 {
        d.powf(1.0 / p as f64)
    } else {
        0.0
    }
}

/// Series expansion of the expectation over row-deletion subsets, truncated
/// after `truncation_order` simultaneous failures.
pub fn ha_criterion_truncated(frf: &FrfMatrix, design: &Design, ha: &HAConfig) -> Result<f64> {
    let t = support_rows(frf, design)?;
    let (n, p) = (t.nrows(), t.ncols());
    ha.validate(n, p)?;
    let count: u128 = (0..=ha.truncation_order)
        .map(|i| binomial(n, i))
        .fold(0u128, |a, b| a.saturating_add(b));
    if count > SCENARIO_GUARD {
        return Err(OedError::CombinatorialGuard {
            count,
            limit: SCENARIO_GUARD,
            hint: "lower truncation_order or use ha_criterion_mc",
        });
    }
    let full = t.tr_mul(&t);
    let q = ha.q;
    let mut total = 0.0;
    for i in 0..=ha.truncation_order {
        let coeff = q.powi(i as i32) * (1.0 - q).powi((n - i) as i32);
        if coeff == 0.0 {
            continue;
        }
        let mut subsets: Vec<Vec<usize>> = Vec::new();
        for_each_combination(n, i, |s| subsets.push(s.to_vec()));
        let terms: Vec<f64> = subsets
            .par_iter()
            .map(|removed| {
                let mut g = full.clone();
                for &r in removed {
                    add_rank_one(&mut g, &t, r, -1.0);
                }
                symmetrize_upper(&mut g);
                det_root(&g, p)
            })
            .collect();
        total += coeff * terms.iter().sum::<f64>();
    }
    Ok(total)
}

/// Monte Carlo mean and standard error of `det(T^T D T)^(1/n_theta)` with
/// independent Bernoulli(1 - q) diagonal entries on the design support.
pub fn ha_criterion_mc(frf: &FrfMatrix, design: &Design, ha: &HAConfig) -> Result<(f64, f64)> {
    let t = support_rows(frf, design)?;
    let (n, p) = (t.nrows(), t.ncols());
    if !(0.0..=1.0).contains(&ha.q) {
        return Err(OedError::InvalidConfig(format!(
            "q = {} outside [0, 1]",
            ha.q
        )));
    }
    if ha.mc_samples == 0 {
        return Err(OedError::InvalidConfig(
            "mc_samples must be at least 1".into(),
        ));
    }
    let values: Vec<f64> = (0..ha.mc_samples)
        .into_par_iter()
        .map(|k| {
            let mut rng = stream_rng(ha.seed, STREAM_MC_MASK, k as u64);
            let mut g = DMatrix::zeros(p, p);
            for r in 0..n {
                if rng.random::<f64>() >= ha.q {
                    add_rank_one(&mut g, &t, r, 1.0);
                }
            }
            symmetrize_upper(&mut g);
            det_root(&g, p)
        })
        .collect();
    let m = values.len() as f64;
    let mean = values.iter().sum::<f64>() / m;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0)
    } else {
        0.0
    };
    Ok((mean, (var / m).sqrt()))
}
