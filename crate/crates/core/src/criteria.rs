//! Log-determinant design criteria, their analytic gradients, and the
//! double-well penalty.
//!
//! With `M(s) = sum_i s_i w_i T_i T_i^T`, every criterion here is built from
//! `logdet(sigma^2 M(s)^{-1}) = n_theta log sigma^2 - logdet M(s)` and
//! `d/dw_i = -s_i T_i^T M(s)^{-1} T_i`.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, OedError, Result};
use crate::inverse::{Design, NoiseModel, ScenarioSet};
use crate::linalg::{
    add_rank_one, information_matrix, row_quadratic_form, symmetrize_upper, InfoFactor,
    DEFAULT_RANK_EPS,
};
use crate::structural::FrfMatrix;

/// Scenario sets at least this large are evaluated on the rayon pool.
const PAR_THRESHOLD: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriterionKind {
    ClassicalLogdet,
    PofLogdet,
    ScenarioAvgLogdet,
}

/// What to do with a scenario whose information matrix is singular.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IllPosedPolicy {
    /// Drop the term and average over the rest.
    #[default]
    Exclude,
    /// Keep the term with value 0.
    Zero,
    Error,
}

#[derive(Debug, Clone)]
pub enum Criterion {
    Classical {
        noise: NoiseModel,
    },
    Pof {
        survival: Vec<f64>,
        noise: NoiseModel,
    },
    ScenarioAvg {
        scenarios: ScenarioSet,
        noise: NoiseModel,
    },
}

impl Criterion {
    pub fn classical(noise: NoiseModel) -> Self {
        Criterion::Classical { noise }
    }

    pub fn pof(survival: Vec<f64>, noise: NoiseModel) -> Result<Self> {
        if let Some(v) = survival.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(OedError::InvalidConfig(format!(
                "survival probability {v} outside [0, 1]"
            )));
        }
        Ok(Criterion::Pof { survival, noise })
    }

    pub fn scenario_avg(scenarios: ScenarioSet, noise: NoiseModel) -> Result<Self> {
        if scenarios.is_empty() {
            return Err(OedError::InvalidConfig(
                "scenario-averaged criterion needs at least one scenario".into(),
            ));
        }
        Ok(Criterion::ScenarioAvg { scenarios, noise })
    }

    pub fn kind(&self) -> CriterionKind {
        match self {
            Criterion::Classical { .. } => CriterionKind::ClassicalLogdet,
            Criterion::Pof { .. } => CriterionKind::PofLogdet,
            Criterion::ScenarioAvg { .. } => CriterionKind::ScenarioAvgLogdet,
        }
    }

    pub fn noise(&self) -> &NoiseModel {
        match self {
            Criterion::Classical { noise }
            | Criterion::Pof { noise, .. }
            | Criterion::ScenarioAvg { noise, .. } => noise,
        }
    }

    fn check(&self, frf: &FrfMatrix, design: &Design) -> Result<()> {
        let n = frf.n_sensors();
        check_len("design weights", n, design.len())?;
        match self {
            Criterion::Classical { .. } => Ok(()),
            Criterion::Pof { survival, .. } => check_len("survival vector", n, survival.len()),
            Criterion::ScenarioAvg { scenarios, .. } => {
                check_len("scenario length", n, scenarios.n_sensors())
            }
        }
    }
}

/// Criterion value plus how many scenario terms were ill-posed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriterionValue {
    pub value: f64,
    pub excluded: usize,
    pub policy: IllPosedPolicy,
}

struct Term {
    logdet_m: f64,
    inverse: DMatrix<f64>,
}

fn factor_term(t: &DMatrix<f64>, coeffs: &[f64]) -> Result<Term> {
    let f = InfoFactor::new(information_matrix(t, coeffs), DEFAULT_RANK_EPS)?;
    Ok(Term {
        logdet_m: f.logdet(),
        inverse: f.into_inverse(),
    })
}

/// Information matrix for one scenario. When only a few observed sensors
/// are degraded it is cheaper to downdate the full matrix.
fn scenario_information(
    t: &DMatrix<f64>,
    weights: &[f64],
    s: &[f64],
    full: &DMatrix<f64>,
) -> DMatrix<f64> {
    let active = weights.iter().filter(|w| **w != 0.0).count();
    let degraded: Vec<usize> = (0..weights.len())
        .filter(|&i| weights[i] != 0.0 && s[i] != 1.0)
        .collect();
    if degraded.len() * 4 <= active {
        let mut m = full.clone();
        for &i in &degraded {
            add_rank_one(&mut m, t, i, -(1.0 - s[i]) * weights[i]);
        }
        symmetrize_upper(&mut m);
        m
    } else {
        let coeffs: Vec<f64> = weights.iter().zip(s).map(|(w, v)| w * v).collect();
        information_matrix(t, &coeffs)
    }
}

struct ScenarioOutcome {
    term: Result<Term>,
}

fn scenario_terms(
    t: &DMatrix<f64>,
    weights: &[f64],
    scenarios: &ScenarioSet,
) -> Vec<ScenarioOutcome> {
    let full = information_matrix(t, weights);
    let eval = |s: &Vec<f64>| {
        let m = scenario_information(t, weights, s, &full);
        ScenarioOutcome {
            term: InfoFactor::new(m, DEFAULT_RANK_EPS).map(|f| Term {
                logdet_m: f.logdet(),
                inverse: f.into_inverse(),
            }),
        }
    };
    if scenarios.len() >= PAR_THRESHOLD {
        scenarios.entries().par_iter().map(eval).collect()
    } else {
        scenarios.entries().iter().map(eval).collect()
    }
}

fn logdet_cov(noise: &NoiseModel, p: usize, logdet_m: f64) -> f64 {
    p as f64 * noise.variance().ln() - logdet_m
}

pub fn evaluate(criterion: &Criterion, frf: &FrfMatrix, design: &Design) -> Result<f64> {
    Ok(evaluate_with_policy(criterion, frf, design, IllPosedPolicy::Error)?.value)
}

pub fn evaluate_with_policy(
    criterion: &Criterion,
    frf: &FrfMatrix,
    design: &Design,
    policy: IllPosedPolicy,
) -> Result<CriterionValue> {
    criterion.check(frf, design)?;
    let t = frf.entries();
    let p = frf.n_params();
    let noise = criterion.noise();
    let single = |coeffs: &[f64]| -> Result<CriterionValue> {
        let term = factor_term(t, coeffs)?;
        Ok(CriterionValue {
            value: logdet_cov(noise, p, term.logdet_m),
            excluded: 0,
            policy,
        })
    };
    match criterion {
        Criterion::Classical { .. } => single(design.weights()),
        Criterion::Pof { survival, .. } => {
            let coeffs: Vec<f64> = design
                .weights()
                .iter()
                .zip(survival)
                .map(|(w, s)| w * s)
                .collect();
            single(&coeffs)
        }
        Criterion::ScenarioAvg { scenarios, .. } => {
            let outcomes = scenario_terms(t, design.weights(), scenarios);
            let mut sum = 0.0;
            let mut included = 0usize;
            let mut excluded = 0usize;
            for (j, o) in outcomes.into_iter().enumerate() {
                match o.term {
                    Ok(term) => {
                        sum += logdet_cov(noise, p, term.logdet_m);
                        included += 1;
                    }
                    Err(e) if e.is_ill_posed() => match policy {
                        IllPosedPolicy::Error => return Err(e.in_scenario(j)),
                        IllPosedPolicy::Exclude => excluded += 1,
                        IllPosedPolicy::Zero => {
                            excluded += 1;
                            included += 1;
                        }
                    },
                    Err(e) => return Err(e),
                }
            }
            if included == 0 {
                return Err(OedError::ill_posed(0, p));
            }
            Ok(CriterionValue {
                value: sum / included as f64,
                excluded,
                policy,
            })
        }
    }
}

pub fn gradient(criterion: &Criterion, frf: &FrfMatrix, design: &Design) -> Result<Vec<f64>> {
    Ok(evaluate_with_gradient(criterion, frf, design)?.1)
}

/// Value and gradient sharing one factorization per term. Ill-posed
/// scenario terms are errors here.
pub fn evaluate_with_gradient(
    criterion: &Criterion,
    frf: &FrfMatrix,
    design: &Design,
) -> Result<(f64, Vec<f64>)> {
    criterion.check(frf, design)?;
    let t = frf.entries();
    let n = frf.n_sensors();
    let p = frf.n_params();
    let noise = criterion.noise();
    match criterion {
        Criterion::Classical { .. } => {
            let term = factor_term(t, design.weights())?;
            let g = (0..n)
                .map(|i| -row_quadratic_form(t, i, &term.inverse))
                .collect();
            Ok((logdet_cov(noise, p, term.logdet_m), g))
        }
        Criterion::Pof { survival, .. } => {
            let coeffs: Vec<f64> = design
                .weights()
                .iter()
                .zip(survival)
                .map(|(w, s)| w * s)
                .collect();
            let term = factor_term(t, &coeffs)?;
            let g = (0..n)
                .map(|i| {
                    if survival[i] == 0.0 {
                        0.0
                    } else {
                        -survival[i] * row_quadratic_form(t, i, &term.inverse)
                    }
                })
                .collect();
            Ok((logdet_cov(noise, p, term.logdet_m), g))
        }
        Criterion::ScenarioAvg { scenarios, .. } => {
            let outcomes = scenario_terms(t, design.weights(), scenarios);
            let s_count = scenarios.len() as f64;
            // sum_j s_ji q_ij = t_i^T (sum_j M_j^-1) t_i - sum_j (1 - s_ji) q_ij
            let mut acc = DMatrix::zeros(p, p);
            let mut grad = vec![0.0; n];
            let mut value = 0.0;
            for (j, (o, s)) in outcomes.into_iter().zip(scenarios.entries()).enumerate() {
                let term = o.term.map_err(|e| e.in_scenario(j))?;
                value += logdet_cov(noise, p, term.logdet_m);
                let degraded = s.iter().filter(|v| **v != 1.0).count();
                if degraded * 2 <= n {
                    acc += &term.inverse;
                    for (i, &si) in s.iter().enumerate() {
                        if si != 1.0 {
                            grad[i] += (1.0 - si) * row_quadratic_form(t, i, &term.inverse);
                        }
                    }
                } else {
                    for (i, &si) in s.iter().enumerate() {
                        if si != 0.0 {
                            grad[i] -= si * row_quadratic_form(t, i, &term.inverse);
                        }
                    }
                }
            }
            for (i, g) in grad.iter_mut().enumerate() {
                let shared = row_quadratic_form(t, i, &acc);
                *g = -(shared - *g) / s_count;
            }
            Ok((value / s_count, grad))
        }
    }
}

/// `sum_i w_i (1 - w_i)`.
pub fn double_well(design: &Design) -> f64 {
    double_well_weights(design.weights())
}

pub fn double_well_weights(w: &[f64]) -> f64 {
    w.iter().map(|v| v * (1.0 - v)).sum()
}

/// `1 - 2 w_i`.
pub fn double_well_gradient(design: &Design) -> Vec<f64> {
    design.weights().iter().map(|v| 1.0 - 2.0 * v).collect()
}
