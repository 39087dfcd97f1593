//! Budget-constrained relaxed design optimization.
//!
//! `solve_relaxed` runs projected gradient descent with a Barzilai-Borwein
//! trial step and Armijo backtracking on `criterion + gamma * double_well`.
//! `gamma_sweep` repeats it over a log-spaced penalty grid and keeps the best
//! binary result. `round_design` and `exhaustive_binary` are the baselines.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::criteria::{double_well_weights, evaluate, evaluate_with_gradient, Criterion};
use crate::error::{check_len, OedError, Result};
use crate::inverse::Design;
use crate::scenarios::{binomial, for_each_combination, SCENARIO_GUARD};
use crate::structural::FrfMatrix;

const PROJECTION_TOL: f64 = 1e-10;
const MIN_STEP: f64 = 1e-12;
const MAX_STEP: f64 = 1e12;
const FLAT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArmijoConfig {
    pub c1: f64,
    pub shrink: f64,
    pub max_backtracks: usize,
}

impl Default for ArmijoConfig {
    fn default() -> Self {
        Self {
            c1: 1e-4,
            shrink: 0.5,
            max_backtracks: 40,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    #[default]
    UniformFeasible,
    Given,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub max_iters: usize,
    /// Tolerance on `||w - P(w - grad)||_2`.
    pub grad_tol: f64,
    pub armijo: ArmijoConfig,
    pub init: InitKind,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            max_iters: 2000,
            grad_tol: 1e-8,
            armijo: ArmijoConfig::default(),
            init: InitKind::UniformFeasible,
            seed: 0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let a = &self.armijo;
        if !(self.grad_tol > 0.0) || !(a.c1 > 0.0) || !(a.shrink > 0.0 && a.shrink < 1.0) {
            return Err(OedError::InvalidConfig(
                "optimizer tolerances must be positive and shrink must lie in (0, 1)".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GammaSweepConfig {
    pub gamma_min: f64,
    pub gamma_max: f64,
    pub count: usize,
    pub binary_tol: f64,
    /// Start each grid point from the previous result instead of `design0`.
    pub warm_start: bool,
}

impl Default for GammaSweepConfig {
    /// 100 log-spaced penalties from 1e-1 to 1e5.
    fn default() -> Self {
        Self {
            gamma_min: 1e-1,
            gamma_max: 1e5,
            count: 100,
            binary_tol: 1e-3,
            warm_start: false,
        }
    }
}

impl GammaSweepConfig {
    /// A one-point grid.
    pub fn single(gamma: f64) -> Self {
        Self {
            gamma_min: gamma,
            gamma_max: gamma,
            count: 1,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self.count {
            0 => false,
            1 => self.gamma_min == self.gamma_max && self.gamma_min >= 0.0,
            _ => self.gamma_min > 0.0 && self.gamma_min < self.gamma_max,
        };
        if !ok || !(self.binary_tol > 0.0) {
            return Err(OedError::InvalidConfig(format!(
                "invalid gamma grid: [{}, {}] x {}",
                self.gamma_min, self.gamma_max, self.count
            )));
        }
        Ok(())
    }

    pub fn grid(&self) -> Vec<f64> {
        if self.count == 1 {
            return vec![self.gamma_min];
        }
        let (lo, hi) = (self.gamma_min.log10(), self.gamma_max.log10());
        let last = (self.count - 1) as f64;
        (0..self.count)
            .map(|k| {
                if k == 0 {
                    self.gamma_min
                } else if k == self.count - 1 {
                    self.gamma_max
                } else {
                    10f64.powf(lo + (hi - lo) * k as f64 / last)
                }
            })
            .collect()
    }
}

/// Euclidean projection onto `{w in [0,1]^n : sum c_i w_i <= b}`.
pub fn project_feasible(v: &[f64], costs: &[f64], budget: f64) -> Result<Vec<f64>> {
    check_len("costs", v.len(), costs.len())?;
    if !(budget > 0.0) {
        return Err(OedError::Infeasible(format!(
            "budget must be positive, got {budget}"
        )));
    }
    if costs.iter().any(|c| !(*c > 0.0)) {
        return Err(OedError::InvalidConfig("costs must be positive".into()));
    }
    let at = |lambda: f64| -> Vec<f64> {
        v.iter()
            .zip(costs)
            .map(|(vi, ci)| (vi - lambda * ci).clamp(0.0, 1.0))
            .collect()
    };
    let spend = |w: &[f64]| -> f64 { w.iter().zip(costs).map(|(w, c)| w * c).sum() };
    let clipped = at(0.0);
    if spend(&clipped) <= budget {
        return Ok(clipped);
    }
    // Spend is continuous and nonincreasing in lambda; keep `hi` on the
    // feasible side so the result never exceeds the budget.
    let mut lo = 0.0;
    let mut hi = v
        .iter()
        .zip(costs)
        .map(|(vi, ci)| vi / ci)
        .fold(0.0_f64, f64::max);
    let mut w_hi = at(hi);
    for _ in 0..200 {
        if budget - spend(&w_hi) <= PROJECTION_TOL * budget {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let w_mid = at(mid);
        if spend(&w_mid) <= budget {
            hi = mid;
            w_hi = w_mid;
        } else {
            lo = mid;
        }
        if hi - lo <= f64::EPSILON * hi {
            break;
        }
    }
    // Solve for lambda exactly on the active set found by the bisection.
    let (mut num, mut den) = (-budget, 0.0);
    for ((vi, ci), wi) in v.iter().zip(costs).zip(&w_hi) {
        if *wi >= 1.0 {
            num += ci;
        } else if *wi > 0.0 {
            num += ci * vi;
            den += ci * ci;
        }
    }
    if den > 0.0 {
        let lambda = num / den;
        if lambda >= lo && lambda <= hi {
            let w = at(lambda);
            if spend(&w) <= budget && spend(&w) > spend(&w_hi) {
                return Ok(w);
            }
        }
    }
    Ok(w_hi)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    pub objective: f64,
    pub criterion: f64,
    pub penalty: f64,
    pub step: f64,
    pub proj_grad_norm: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RelaxedSolution {
    pub design: Design,
    pub gamma: f64,
    pub objective: f64,
    pub criterion: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Set when the line search gave up and the best iterate was returned.
    pub warning: Option<String>,
    pub trace: Vec<TraceRow>,
}

struct Objective<'a> {
    frf: &'a FrfMatrix,
    criterion: &'a Criterion,
    template: &'a Design,
    gamma: f64,
}

impl Objective<'_> {
    /// (objective, criterion, penalty, gradient).
    fn eval(&self, w: &[f64]) -> Result<(f64, f64, f64, Vec<f64>)> {
        let design = self.template.with_weights(w.to_vec())?;
        let (crit, mut grad) = evaluate_with_gradient(self.criterion, self.frf, &design)?;
        let penalty = double_well_weights(w);
        if self.gamma != 0.0 {
            for (g, wi) in grad.iter_mut().zip(w) {
                *g += self.gamma * (1.0 - 2.0 * wi);
            }
        }
        Ok((crit + self.gamma * penalty, crit, penalty, grad))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

// Changes at the rounding level of the objective cannot be told apart from
// a decrease.
fn flat(f_new: f64, f: f64) -> bool {
    (f_new - f).abs() <= FLAT_TOL * f.abs().max(1.0)
}

fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

pub fn solve_relaxed(
    frf: &FrfMatrix,
    criterion: &Criterion,
    design0: &Design,
    gamma: f64,
    config: &OptimizerConfig,
) -> Result<RelaxedSolution> {
    config.validate()?;
    check_len("design weights", frf.n_sensors(), design0.len())?;
    if !(gamma >= 0.0) {
        return Err(OedError::InvalidConfig(format!(
            "gamma must be >= 0, got {gamma}"
        )));
    }
    let start = match config.init {
        InitKind::Given => design0.clone(),
        InitKind::UniformFeasible => {
            Design::uniform_feasible(design0.costs().to_vec(), design0.budget())?
        }
    };
    if !start.feasible() {
        return Err(OedError::Infeasible(
            "initial design exceeds the budget".into(),
        ));
    }
    let costs = start.costs().to_vec();
    let budget = start.budget();
    let obj = Objective {
        frf,
        criterion,
        template: &start,
        gamma,
    };

    let mut w = start.weights().to_vec();
    let (mut f, mut crit, mut pen, mut g) = obj.eval(&w)?;
    let mut trace = Vec::new();
    let mut alpha = 1.0 / norm_inf(&g).max(1e-12);
    let mut converged = false;
    let mut warning = None;
    let mut iterations = 0;
    let mut last_step = 0.0;

    loop {
        let shifted: Vec<f64> = w.iter().zip(&g).map(|(wi, gi)| wi - gi).collect();
        let p = project_feasible(&shifted, &costs, budget)?;
        let pg_norm = w
            .iter()
            .zip(&p)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        trace.push(TraceRow {
            iter: iterations,
            objective: f,
            criterion: crit,
            penalty: pen,
            step: last_step,
            proj_grad_norm: pg_norm,
        });
        if pg_norm <= config.grad_tol {
            converged = true;
            break;
        }
        if iterations >= config.max_iters {
            break;
        }

        let mut step = alpha.clamp(MIN_STEP, MAX_STEP);
        let mut accepted = None;
        for _ in 0..=config.armijo.max_backtracks {
            let trial: Vec<f64> = w.iter().zip(&g).map(|(wi, gi)| wi - step * gi).collect();
            let w_new = project_feasible(&trial, &costs, budget)?;
            let dir: Vec<f64> = w_new.iter().zip(&w).map(|(a, b)| a - b).collect();
            let decrease = dot(&g, &dir);
            match obj.eval(&w_new) {
                Ok(vals) if vals.0 <= f + config.armijo.c1 * decrease || flat(vals.0, f) => {
                    accepted = Some((w_new, dir, vals));
                    break;
                }
                Ok(_) => {}
                Err(e) if e.is_ill_posed() => {}
                Err(e) => return Err(e),
            }
            step *= config.armijo.shrink;
        }
        let Some((w_new, s, (f_new, crit_new, pen_new, g_new))) = accepted else {
            warning = Some(format!(
                "line search exhausted {} backtracks at iteration {iterations}; returning best iterate",
                config.armijo.max_backtracks
            ));
            break;
        };
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        alpha = if sy > 0.0 {
            dot(&s, &s) / sy
        } else {
            1.0 / norm_inf(&g_new).max(1e-12)
        };
        w = w_new;
        f = f_new;
        crit = crit_new;
        pen = pen_new;
        g = g_new;
        last_step = step;
        iterations += 1;
    }

    Ok(RelaxedSolution {
        design: start.with_weights(w)?,
        gamma,
        objective: f,
        criterion: crit,
        iterations,
        converged,
        warning,
        trace,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub gamma: f64,
    pub objective: f64,
    /// Unpenalized criterion at the relaxed solution.
    pub criterion: f64,
    pub binary_distance: f64,
    pub feasible: bool,
    pub binary: bool,
    /// Criterion of the design snapped to {0, 1}, when binary and well-posed.
    pub snapped_criterion: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepResult {
    /// Selected binary design, or the best well-posed rounding of a grid
    /// solution when `fallback` is set.
    pub design: Design,
    pub criterion: f64,
    pub selected_gamma: Option<f64>,
    /// True when no grid point produced a usable binary design.
    pub fallback: bool,
    pub best_fractional: Design,
    pub entries: Vec<SweepEntry>,
    pub solutions: Vec<RelaxedSolution>,
}

fn snap(design: &Design) -> Result<Design> {
    design.with_weights(
        design
            .weights()
            .iter()
            .map(|w| if *w >= 0.5 { 1.0 } else { 0.0 })
            .collect(),
    )
}

pub fn gamma_sweep(
    frf: &FrfMatrix,
    criterion: &Criterion,
    design0: &Design,
    sweep: &GammaSweepConfig,
    config: &OptimizerConfig,
) -> Result<SweepResult> {
    sweep.validate()?;
    let grid = sweep.grid();
    let solutions: Vec<RelaxedSolution> = if sweep.warm_start {
        let mut out: Vec<RelaxedSolution> = Vec::with_capacity(grid.len());
        let mut cfg = *config;
        for &gamma in &grid {
            let start = match out.last() {
                Some(prev) => {
                    cfg.init = InitKind::Given;
                    prev.design.clone()
                }
                None => design0.clone(),
            };
            out.push(solve_relaxed(frf, criterion, &start, gamma, &cfg)?);
        }
        out
    } else {
        grid.par_iter()
            .map(|&gamma| solve_relaxed(frf, criterion, design0, gamma, config))
            .collect::<Result<_>>()?
    };

    let mut entries = Vec::with_capacity(solutions.len());
    let mut best: Option<(f64, usize, Design)> = None;
    for (k, sol) in solutions.iter().enumerate() {
        let binary = sol.design.is_binary_within(sweep.binary_tol);
        let feasible = sol.design.feasible();
        let mut snapped_criterion = None;
        if binary && feasible {
            let snapped = snap(&sol.design)?;
            if snapped.feasible() {
                if let Ok(v) = evaluate(criterion, frf, &snapped) {
                    snapped_criterion = Some(v);
                    if best.as_ref().is_none_or(|(bv, _, _)| v < *bv) {
                        best = Some((v, k, snapped));
                    }
                }
            }
        }
        entries.push(SweepEntry {
            gamma: sol.gamma,
            objective: sol.objective,
            criterion: sol.criterion,
            binary_distance: sol.design.binary_distance(),
            feasible,
            binary,
            snapped_criterion,
            iterations: sol.iterations,
            converged: sol.converged,
        });
    }

    let best_fractional = solutions
        .iter()
        .min_by(|a, b| a.criterion.total_cmp(&b.criterion))
        .map(|s| s.design.clone())
        .expect("grid is nonempty");

    Ok(match best {
        Some((value, k, design)) => SweepResult {
            design,
            criterion: value,
            selected_gamma: Some(grid[k]),
            fallback: false,
            best_fractional,
            entries,
            solutions,
        },
        None => {
            // Round every grid solution and keep the best well-posed result;
            // the best fractional design alone often rounds to an ill-posed
            // support.
            let mut pick: Option<(f64, Design)> = None;
            for sol in std::iter::once(&best_fractional).chain(solutions.iter().map(|s| &s.design))
            {
                let rounded = round_design(sol)?;
                if let Ok(v) = evaluate(criterion, frf, &rounded) {
                    if pick.as_ref().is_none_or(|(bv, _)| v < *bv) {
                        pick = Some((v, rounded));
                    }
                }
            }
            let (value, design) = match pick {
                Some(p) => p,
                None => (f64::INFINITY, round_design(&best_fractional)?),
            };
            SweepResult {
                design,
                criterion: value,
                selected_gamma: None,
                fallback: true,
                best_fractional,
                entries,
                solutions,
            }
        }
    })
}

/// Greedy rounding: visit positive weights from largest to smallest (ties
/// by lower index) and switch each on while its cost still fits.
pub fn round_design(design: &Design) -> Result<Design> {
    let w = design.weights();
    let costs = design.costs();
    let mut order: Vec<usize> = (0..w.len()).filter(|&i| w[i] > 0.0).collect();
    order.sort_by(|&a, &b| w[b].total_cmp(&w[a]).then(a.cmp(&b)));
    let mut out = vec![0.0; w.len()];
    let mut spent = 0.0;
    for i in order {
        if spent + costs[i] <= design.budget() + 1e-12 {
            out[i] = 1.0;
            spent += costs[i];
        }
    }
    design.with_weights(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExhaustiveResult {
    pub design: Design,
    pub criterion: f64,
    pub evaluated: usize,
    pub ill_posed: usize,
}

/// Enumerates every feasible binary design and returns the criterion
/// minimizer; ties go to the lexicographically smallest support.
pub fn exhaustive_binary(
    frf: &FrfMatrix,
    criterion: &Criterion,
    costs: &[f64],
    budget: f64,
) -> Result<ExhaustiveResult> {
    let n = frf.n_sensors();
    check_len("costs", n, costs.len())?;
    let template = Design::new(vec![0.0; n], costs.to_vec(), budget)?;

    let mut sorted = costs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut k_max = 0;
    let mut acc = 0.0;
    for c in &sorted {
        if acc + c > budget + 1e-12 {
            break;
        }
        acc += c;
        k_max += 1;
    }
    let count: u128 = (0..=k_max)
        .map(|k| binomial(n, k))
        .fold(0u128, |a, b| a.saturating_add(b));
    if count > SCENARIO_GUARD {
        return Err(OedError::CombinatorialGuard {
            count,
            limit: SCENARIO_GUARD,
            hint: "use the relaxed gamma-sweep path",
        });
    }

    let mut supports: Vec<Vec<usize>> = Vec::new();
    for k in 1..=k_max {
        for_each_combination(n, k, |s| {
            let spend: f64 = s.iter().map(|&i| costs[i]).sum();
            if spend <= budget + 1e-12 {
                supports.push(s.to_vec());
            }
        });
    }
    let evaluated = supports.len();
    let values: Vec<Result<f64>> = supports
        .par_iter()
        .map(|s| {
            let mut w = vec![0.0; n];
            for &i in s {
                w[i] = 1.0;
            }
            evaluate(criterion, frf, &template.with_weights(w)?)
        })
        .collect();

    let mut best: Option<(f64, usize)> = None;
    let mut ill_posed = 0;
    let mut last_err = None;
    for (idx, v) in values.into_iter().enumerate() {
        match v {
            Ok(v) => {
                let better = match best {
                    None => true,
                    Some((bv, bi)) => v < bv || (v == bv && supports[idx] < supports[bi]),
                };
                if better {
                    best = Some((v, idx));
                }
            }
            Err(e) if e.is_ill_posed() => {
                ill_posed += 1;
                last_err = Some(e);
            }
            Err(e) => return Err(e),
        }
    }
    let Some((value, idx)) = best else {
        return Err(match last_err {
            Some(OedError::IllPosed { rank, required, .. }) => OedError::IllPosed {
                rank,
                required,
                scenario: None,
            },
            _ => OedError::ill_posed(0, frf.n_params()),
        });
    };
    let mut w = vec![0.0; n];
    for &i in &supports[idx] {
        w[i] = 1.0;
    }
    Ok(ExhaustiveResult {
        design: template.with_weights(w)?,
        criterion: value,
        evaluated,
        ill_posed,
    })
}
