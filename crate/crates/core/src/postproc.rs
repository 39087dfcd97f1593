//! Design evaluation over failure scenarios and parameter draws.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::criteria::IllPosedPolicy;
use crate::error::{check_len, OedError, Result};
use crate::inverse::{Design, NoiseModel, ScenarioSet, WlsEstimator};
use crate::linalg::{information_matrix, psd_sqrt, InfoFactor, DEFAULT_RANK_EPS};
use crate::rng::{content_seed, stream_rng, STREAM_NOISE, STREAM_RANDOM_DESIGN, STREAM_THETA0};
use crate::structural::FrfMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Logdet,
    EmpiricalMse,
    EmpiricalPmse,
}

impl Metric {
    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Logdet => "logdet",
            Metric::EmpiricalMse => "empirical_mse",
            Metric::EmpiricalPmse => "empirical_pmse",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportSeeds {
    pub master: Option<u64>,
    pub scenarios: Option<u64>,
    pub theta0: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerformanceReport {
    pub metric: Metric,
    /// `None` marks an excluded (ill-posed) scenario.
    pub per_scenario: Vec<Option<f64>>,
    pub excluded_count: usize,
    pub policy: IllPosedPolicy,
    pub mean: f64,
    pub median: f64,
    pub worst: f64,
    pub no_failure_value: f64,
    pub fractional_renorm: bool,
    pub seeds: ReportSeeds,
    pub config_hash: Option<String>,
    /// Display truncation for histogram consumers; values are never altered.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub display_range: Option<[f64; 2]>,
}

/// Per-scenario outcome before policy handling.
type Cell = Result<f64>;

fn summarize(
    metric: Metric,
    cells: Vec<Cell>,
    policy: IllPosedPolicy,
    no_failure_value: f64,
    p: usize,
) -> Result<PerformanceReport> {
    let mut per_scenario = Vec::with_capacity(cells.len());
    let mut excluded = 0;
    for (j, c) in cells.into_iter().enumerate() {
        match c {
            Ok(v) => per_scenario.push(Some(v)),
            Err(e) if e.is_ill_posed() => {
                excluded += 1;
                match policy {
                    IllPosedPolicy::Error => return Err(e.in_scenario(j)),
                    IllPosedPolicy::Exclude => per_scenario.push(None),
                    IllPosedPolicy::Zero => per_scenario.push(Some(0.0)),
                }
            }
            Err(e) => return Err(e),
        }
    }
    let mut included: Vec<f64> = per_scenario.iter().flatten().copied().collect();
    if included.is_empty() {
        return Err(OedError::ill_posed(0, p));
    }
    let mean = included.iter().sum::<f64>() / included.len() as f64;
    let worst = included.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    included.sort_by(f64::total_cmp);
    let mid = included.len() / 2;
    let median = if included.len() % 2 == 1 {
        included[mid]
    } else {
        0.5 * (included[mid - 1] + included[mid])
    };
    Ok(PerformanceReport {
        metric,
        per_scenario,
        excluded_count: excluded,
        policy,
        mean,
        median,
        worst,
        no_failure_value,
        fractional_renorm: false,
        seeds: ReportSeeds::default(),
        config_hash: None,
        display_range: None,
    })
}

fn masked_coeffs(weights: &[f64], mask: &[f64], renorm: bool) -> Vec<f64> {
    let mut c: Vec<f64> = weights.iter().zip(mask).map(|(w, m)| w * m).collect();
    if renorm {
        let before: f64 = weights.iter().sum();
        let after: f64 = c.iter().sum();
        if after > 0.0 {
            let s = before / after;
            c.iter_mut().for_each(|v| *v *= s);
        }
    }
    c
}

fn logdet_cov(frf: &FrfMatrix, coeffs: &[f64], noise: &NoiseModel) -> Result<f64> {
    let m = information_matrix(frf.entries(), coeffs);
    let f = InfoFactor::new(m, DEFAULT_RANK_EPS)?;
    Ok(frf.n_params() as f64 * noise.variance().ln() - f.logdet())
}

fn check_scenarios(frf: &FrfMatrix, design: &Design, scenarios: &ScenarioSet) -> Result<()> {
    check_len("design weights", frf.n_sensors(), design.len())?;
    check_len("scenario length", frf.n_sensors(), scenarios.n_sensors())?;
    if scenarios.is_empty() {
        return Err(OedError::InvalidConfig("scenario set is empty".into()));
    }
    Ok(())
}

/// Log-determinant of the covariance under each scenario mask.
pub fn logdet_over_scenarios(
    frf: &FrfMatrix,
    design: &Design,
    scenarios: &ScenarioSet,
    noise: &NoiseModel,
    fractional_renorm: bool,
    policy: IllPosedPolicy,
) -> Result<PerformanceReport> {
    check_scenarios(frf, design, scenarios)?;
    let w = design.weights();
    let cells: Vec<Cell> = scenarios
        .entries()
        .par_iter()
        .map(|mask| logdet_cov(frf, &masked_coeffs(w, mask, fractional_renorm), noise))
        .collect();
    let no_failure = logdet_cov(frf, w, noise)?;
    let mut report = summarize(Metric::Logdet, cells, policy, no_failure, frf.n_params())?;
    report.fractional_renorm = fractional_renorm;
    report.seeds.scenarios = scenarios.provenance().seed;
    Ok(report)
}

/// Squared errors `(|theta_hat - theta0|^2, |T (theta_hat - theta0)|^2)`
/// averaged over `n_test` noise draws for each of the given `theta0`s.
fn mc_errors<R: Rng>(
    frf: &FrfMatrix,
    est: &WlsEstimator,
    gram: &DMatrix<f64>,
    thetas: &[DVector<f64>],
    sigma: f64,
    n_test: usize,
    rng: &mut R,
) -> (f64, f64) {
    let t = frf.entries();
    let active = est.active();
    let mut y = DVector::zeros(active.len());
    let (mut mse, mut pmse) = (0.0, 0.0);
    for theta0 in thetas {
        let clean: Vec<f64> = active
            .iter()
            .map(|&i| t.row(i).transpose().dot(theta0))
            .collect();
        for _ in 0..n_test {
            for (k, c) in clean.iter().enumerate() {
                let e: f64 = rng.sample(StandardNormal);
                y[k] = c + sigma * e;
            }
            let d = est.gain() * &y - theta0;
            mse += d.norm_squared();
            pmse += (gram * &d).dot(&d);
        }
    }
    let n = (thetas.len() * n_test) as f64;
    (mse / n, pmse / n)
}

fn estimator_with(
    frf: &FrfMatrix,
    design: &Design,
    mask: Option<&[f64]>,
    n_test: usize,
) -> Result<WlsEstimator> {
    if n_test == 0 {
        return Err(OedError::InvalidConfig("n_test must be at least 1".into()));
    }
    WlsEstimator::new(frf, design, mask)
}

/// Monte Carlo parameter MSE `mean |theta_hat - theta0|^2`.
pub fn empirical_mse(
    frf: &FrfMatrix,
    design: &Design,
    theta0: &DVector<f64>,
    noise: &NoiseModel,
    n_test: usize,
    seed: u64,
    mask: Option<&[f64]>,
) -> Result<f64> {
    Ok(empirical_errors(frf, design, theta0, noise, n_test, seed, mask)?.0)
}

/// Monte Carlo prediction MSE `mean |T (theta_hat - theta0)|^2`.
pub fn empirical_pmse(
    frf: &FrfMatrix,
    design: &Design,
    theta0: &DVector<f64>,
    noise: &NoiseModel,
    n_test: usize,
    seed: u64,
    mask: Option<&[f64]>,
) -> Result<f64> {
    Ok(empirical_errors(frf, design, theta0, noise, n_test, seed, mask)?.1)
}

/// Both errors from the same draws.
pub fn empirical_errors(
    frf: &FrfMatrix,
    design: &Design,
    theta0: &DVector<f64>,
    noise: &NoiseModel,
    n_test: usize,
    seed: u64,
    mask: Option<&[f64]>,
) -> Result<(f64, f64)> {
    check_len("theta0", frf.n_params(), theta0.len())?;
    let est = estimator_with(frf, design, mask, n_test)?;
    let gram = frf.entries().tr_mul(frf.entries());
    let mut rng = stream_rng(seed, STREAM_NOISE, 0);
    Ok(mc_errors(
        frf,
        &est,
        &gram,
        std::slice::from_ref(theta0),
        noise.sigma(),
        n_test,
        &mut rng,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NominalParameterDistribution {
    pub mean: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
    pub n_draws: usize,
    pub seed: u64,
}

impl NominalParameterDistribution {
    /// Gaussian with covariance `6^2 I` and 100 draws. The mean is the
    /// six-load demo vector, repeated or truncated to `n_params`.
    pub fn with_seed(n_params: usize, seed: u64) -> Self {
        const MEAN: [f64; 6] = [40.0, 500.0, 2.0, 12.0, 600.0, 80.0];
        let mean = MEAN.iter().copied().cycle().take(n_params).collect();
        let covariance = (0..n_params)
            .map(|i| {
                (0..n_params)
                    .map(|j| if i == j { 36.0 } else { 0.0 })
                    .collect()
            })
            .collect();
        Self {
            mean,
            covariance,
            n_draws: 100,
            seed,
        }
    }

    pub fn validate(&self) -> Result<DMatrix<f64>> {
        let n = self.mean.len();
        if self.covariance.len() != n || self.covariance.iter().any(|r| r.len() != n) {
            return Err(OedError::InvalidConfig(
                "theta0 covariance must be n_theta x n_theta".into(),
            ));
        }
        if self.n_draws == 0 {
            return Err(OedError::InvalidConfig("n_draws must be at least 1".into()));
        }
        let cov = DMatrix::from_fn(n, n, |i, j| self.covariance[i][j]);
        if cov.clone().cholesky().is_none() {
            return Err(OedError::InvalidConfig(
                "theta0 covariance must be positive definite".into(),
            ));
        }
        Ok(cov)
    }

    pub fn draws(&self) -> Result<Vec<DVector<f64>>> {
        let cov = self.validate()?;
        let root = psd_sqrt(&cov)?;
        let mean = DVector::from_column_slice(&self.mean);
        Ok((0..self.n_draws)
            .map(|k| {
                let mut rng = stream_rng(self.seed, STREAM_THETA0, k as u64);
                let z = DVector::from_fn(mean.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
                &mean + &root * z
            })
            .collect())
    }
}

/// Parameter and prediction MSE averaged over `theta0` draws for every
/// failure scenario. Noise draws are keyed by the masked coefficients, so
/// scenarios that coincide on the design support share their values.
#[allow(clippy::too_many_arguments)]
pub fn mse_over_failures(
    frf: &FrfMatrix,
    design: &Design,
    scenarios: &ScenarioSet,
    dist: &NominalParameterDistribution,
    noise: &NoiseModel,
    n_test: usize,
    seed: u64,
    policy: IllPosedPolicy,
) -> Result<(PerformanceReport, PerformanceReport)> {
    check_scenarios(frf, design, scenarios)?;
    check_len("theta0 mean", frf.n_params(), dist.mean.len())?;
    if n_test == 0 {
        return Err(OedError::InvalidConfig("n_test must be at least 1".into()));
    }
    let thetas = dist.draws()?;
    let gram = frf.entries().tr_mul(frf.entries());
    let w = design.weights();

    let keys: Vec<Vec<u64>> = scenarios
        .entries()
        .iter()
        .map(|m| w.iter().zip(m).map(|(a, b)| (a * b).to_bits()).collect())
        .collect();
    let mut index: HashMap<&[u64], usize> = HashMap::new();
    let mut unique: Vec<usize> = Vec::new();
    let slot: Vec<usize> = keys
        .iter()
        .enumerate()
        .map(|(j, k)| {
            *index.entry(k.as_slice()).or_insert_with(|| {
                unique.push(j);
                unique.len() - 1
            })
        })
        .collect();

    let run = |coeffs: &[f64]| -> Result<(f64, f64)> {
        let d = design.with_weights(coeffs.to_vec())?;
        let est = WlsEstimator::new(frf, &d, None)?;
        let mut rng = stream_rng(content_seed(seed, STREAM_NOISE, coeffs), STREAM_NOISE, 0);
        Ok(mc_errors(
            frf,
            &est,
            &gram,
            &thetas,
            noise.sigma(),
            n_test,
            &mut rng,
        ))
    };
    let results: Vec<Result<(f64, f64)>> = unique
        .par_iter()
        .map(|&j| run(&masked_coeffs(w, &scenarios.entries()[j], false)))
        .collect();
    // Ill-posed outcomes are kept as (rank, required) so they can be shared
    // between duplicate scenarios.
    let mut shared = Vec::with_capacity(results.len());
    for r in results {
        shared.push(match r {
            Ok(v) => Ok(v),
            Err(OedError::IllPosed { rank, required, .. }) => Err((rank, required)),
            Err(e) => return Err(e),
        });
    }
    let split = |pick: fn(&(f64, f64)) -> f64| -> Vec<Cell> {
        slot.iter()
            .map(|&u| match &shared[u] {
                Ok(v) => Ok(pick(v)),
                Err((rank, required)) => Err(OedError::ill_posed(*rank, *required)),
            })
            .collect()
    };
    let (nf_mse, nf_pmse) = run(w)?;
    let p = frf.n_params();
    let mut mse = summarize(Metric::EmpiricalMse, split(|v| v.0), policy, nf_mse, p)?;
    let mut pmse = summarize(Metric::EmpiricalPmse, split(|v| v.1), policy, nf_pmse, p)?;
    for r in [&mut mse, &mut pmse] {
        r.seeds = ReportSeeds {
            master: Some(seed),
            scenarios: scenarios.provenance().seed,
            theta0: Some(dist.seed),
        };
    }
    Ok((mse, pmse))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RandomDesignKind {
    Fractional,
    Binary,
}

/// Random baselines on a support of `support_size` sensors drawn without
/// replacement. Fractional weights are uniform draws rescaled to sum to
/// `min(budget, support_size)`, capped at one.
pub fn random_designs(
    n_y: usize,
    support_size: usize,
    count: usize,
    seed: u64,
    kind: RandomDesignKind,
    budget: f64,
) -> Result<Vec<Design>> {
    if support_size > n_y || support_size == 0 {
        return Err(OedError::InvalidConfig(format!(
            "support size {support_size} must lie in 1..={n_y}"
        )));
    }
    (0..count)
        .map(|k| {
            let mut rng = stream_rng(seed, STREAM_RANDOM_DESIGN, k as u64);
            let mut support = sample(&mut rng, n_y, support_size).into_vec();
            support.sort_unstable();
            let mut w = vec![0.0; n_y];
            match kind {
                RandomDesignKind::Binary => support.iter().for_each(|&i| w[i] = 1.0),
                RandomDesignKind::Fractional => {
                    let raw: Vec<f64> = support.iter().map(|_| rng.random::<f64>()).collect();
                    let capped = cap_rescale(&raw, budget.min(support_size as f64));
                    for (i, v) in support.iter().zip(capped) {
                        w[*i] = v;
                    }
                }
            }
            Design::with_unit_costs(w, budget)
        })
        .collect()
}

/// Rescales nonnegative values to sum to `target` with every entry at most
/// one, redistributing any excess over the uncapped entries.
fn cap_rescale(raw: &[f64], target: f64) -> Vec<f64> {
    let mut out = vec![0.0; raw.len()];
    let mut free: Vec<usize> = (0..raw.len()).filter(|&i| raw[i] > 0.0).collect();
    let mut remaining = target;
    while !free.is_empty() && remaining > 0.0 {
        let mass: f64 = free.iter().map(|&i| raw[i]).sum();
        let s = remaining / mass;
        let (over, under): (Vec<usize>, Vec<usize>) =
            free.iter().partition(|&&i| raw[i] * s >= 1.0);
        if over.is_empty() {
            under.iter().for_each(|&i| out[i] = raw[i] * s);
            break;
        }
        for i in over {
            out[i] = 1.0;
            remaining -= 1.0;
        }
        free = under;
    }
    out
}

impl PerformanceReport {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(f), self)?;
        Ok(())
    }

    /// `scenario_id,metric,value`; excluded scenarios have an empty value.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["scenario_id", "metric", "value"])?;
        for (j, v) in self.per_scenario.iter().enumerate() {
            let value = v.map(|v| format!("{v:e}")).unwrap_or_default();
            w.write_record([j.to_string().as_str(), self.metric.as_str(), value.as_str()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// One row per (label, statistic): mean, median, worst and no_failure.
pub fn write_summary_csv(path: &Path, reports: &[(String, &PerformanceReport)]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "design,metric,statistic,value,excluded")?;
    for (label, r) in reports {
        for (stat, v) in [
            ("mean", r.mean),
            ("median", r.median),
            ("worst", r.worst),
            ("no_failure", r.no_failure_value),
        ] {
            writeln!(
                out,
                "{label},{},{stat},{v:e},{}",
                r.metric.as_str(),
                r.excluded_count
            )?;
        }
    }
    out.flush()?;
    Ok(())
}
