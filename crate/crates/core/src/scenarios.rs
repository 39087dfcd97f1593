//! Failure-scenario generators: combinatorial masks, Bernoulli draws from a
//! probability-of-failure map, and clipping-induced dropout.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, OedError, Result};
use crate::inverse::ScenarioSet;
use crate::linalg::psd_sqrt;
use crate::rng::{stream_rng, STREAM_BERNOULLI, STREAM_FORCES};
use crate::structural::{FrfMatrix, StructuralModel};

/// Largest scenario count any combinatorial generator will materialize.
pub const SCENARIO_GUARD: u128 = 1_000_000;

/// Per-sensor probability of failure `q_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PofMap {
    q: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    level_rule: Option<BTreeMap<u32, f64>>,
}

impl PofMap {
    pub fn new(q: Vec<f64>) -> Result<Self> {
        if let Some((i, v)) = q
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(OedError::InvalidConfig(format!(
                "PoF {i} = {v} outside [0, 1]"
            )));
        }
        Ok(Self {
            q,
            level_rule: None,
        })
    }

    pub fn uniform(n: usize, q: f64) -> Result<Self> {
        Self::new(vec![q; n])
    }

    pub fn q(&self) -> &[f64] {
        &self.q
    }

    pub fn level_rule(&self) -> Option<&BTreeMap<u32, f64>> {
        self.level_rule.as_ref()
    }

    pub fn survival(&self) -> Vec<f64> {
        self.q.iter().map(|q| 1.0 - q).collect()
    }

    pub fn len(&self) -> usize {
        self.q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q.is_empty()
    }
}

/// Base and level 1 at 5%, level 2 at 30%, level 3 at 50%.
pub fn default_level_rule() -> BTreeMap<u32, f64> {
    BTreeMap::from([(0, 0.05), (1, 0.05), (2, 0.3), (3, 0.5)])
}

pub fn one_out_scenarios(n_y: usize) -> ScenarioSet {
    let entries = (0..n_y)
        .map(|j| (0..n_y).map(|i| if i == j { 0.0 } else { 1.0 }).collect())
        .collect();
    ScenarioSet::masks(n_y, entries, "one-out", None).expect("one-out masks are binary")
}

pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
        if acc > u64::MAX as u128 {
            return u128::MAX;
        }
    }
    acc
}

/// Calls `f` on every `k`-subset of `0..n` in lexicographic order.
pub(crate) fn for_each_combination(n: usize, k: usize, mut f: impl FnMut(&[usize])) {
    if k > n {
        return;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        f(&idx);
        let Some(pos) = (0..k).rev().find(|&p| idx[p] != p + n - k) else {
            return;
        };
        idx[pos] += 1;
        for q in pos + 1..k {
            idx[q] = idx[q - 1] + 1;
        }
    }
}

/// Every mask with exactly `k` failed sensors, zero positions in
/// lexicographic order.
pub fn k_out_scenarios(n_y: usize, k: usize) -> Result<ScenarioSet> {
    if k > n_y {
        return Err(OedError::InvalidConfig(format!(
            "cannot fail {k} of {n_y} sensors"
        )));
    }
    let count = binomial(n_y, k);
    if count > SCENARIO_GUARD {
        return Err(OedError::CombinatorialGuard {
            count,
            limit: SCENARIO_GUARD,
            hint: "sample failure scenarios with bernoulli_scenarios instead",
        });
    }
    let mut entries = Vec::with_capacity(count as usize);
    for_each_combination(n_y, k, |zeros| {
        let mut m = vec![1.0; n_y];
        for &z in zeros {
            m[z] = 0.0;
        }
        entries.push(m);
    });
    ScenarioSet::masks(n_y, entries, &format!("{k}-out"), None)
}

/// Masks with sensor `i` down with probability `q_i`. Scenario `j` draws
/// from its own stream so the set is independent of thread count.
pub fn bernoulli_scenarios(pof: &PofMap, n_samps: usize, seed: u64) -> Result<ScenarioSet> {
    if n_samps == 0 {
        return Err(OedError::InvalidConfig("n_samps must be >= 1".into()));
    }
    let q = pof.q();
    let entries: Vec<Vec<f64>> = (0..n_samps)
        .into_par_iter()
        .map(|j| {
            let mut rng = stream_rng(seed, STREAM_BERNOULLI, j as u64);
            q.iter()
                .map(|&qi| {
                    let u: f64 = rng.random();
                    if u < qi {
                        0.0
                    } else {
                        1.0
                    }
                })
                .collect()
        })
        .collect();
    ScenarioSet::masks(q.len(), entries, "bernoulli", Some(seed))
}

pub fn tiered_pof(model: &StructuralModel, level_rule: &BTreeMap<u32, f64>) -> Result<PofMap> {
    let levels = model.sensor_levels();
    pof_from_levels(&levels, level_rule)
}

pub fn pof_from_levels(levels: &[u32], level_rule: &BTreeMap<u32, f64>) -> Result<PofMap> {
    let q = levels
        .iter()
        .map(|l| {
            level_rule.get(l).copied().ok_or_else(|| {
                OedError::InvalidConfig(format!("PoF rule has no entry for level {l}"))
            })
        })
        .collect::<Result<Vec<f64>>>()?;
    let mut map = PofMap::new(q)?;
    map.level_rule = Some(level_rule.clone());
    Ok(map)
}

fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let n = rows.len();
    for r in rows {
        check_len("covariance row", n, r.len())?;
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

/// Gaussian load distribution and accelerometer range for clipping studies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClippingConfig {
    /// Amplitude beyond which a sensor is lost, in response units (g).
    pub threshold: f64,
    pub force_mean: Vec<f64>,
    pub force_covariance: Vec<Vec<f64>>,
    pub n_realizations: usize,
    pub seed: u64,
}

impl ClippingConfig {
    /// Zero-mean, uncorrelated loads with common variance.
    pub fn isotropic(
        n_theta: usize,
        variance: f64,
        threshold: f64,
        n_realizations: usize,
        seed: u64,
    ) -> Self {
        let cov = (0..n_theta)
            .map(|i| {
                (0..n_theta)
                    .map(|j| if i == j { variance } else { 0.0 })
                    .collect()
            })
            .collect();
        Self {
            threshold,
            force_mean: vec![0.0; n_theta],
            force_covariance: cov,
            n_realizations,
            seed,
        }
    }

    fn validate(&self, n_theta: usize) -> Result<()> {
        if !(self.threshold > 0.0) {
            return Err(OedError::InvalidConfig(
                "clipping threshold must be positive".into(),
            ));
        }
        if self.n_realizations == 0 {
            return Err(OedError::InvalidConfig(
                "n_realizations must be >= 1".into(),
            ));
        }
        check_len("force_mean", n_theta, self.force_mean.len())?;
        check_len("force_covariance", n_theta, self.force_covariance.len())?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClippingReport {
    pub threshold: f64,
    pub n_realizations: usize,
    pub seed: u64,
    /// Percentage of realizations in which each sensor clipped.
    pub occurrence_pct: Vec<f64>,
    /// Realizations in which every sensor clipped.
    pub all_clipped: usize,
}

fn force_draws(clip: &ClippingConfig, n_theta: usize) -> Result<Vec<DVector<f64>>> {
    clip.validate(n_theta)?;
    let root = psd_sqrt(&matrix_from_rows(&clip.force_covariance)?)?;
    let mean = DVector::from_column_slice(&clip.force_mean);
    Ok((0..clip.n_realizations)
        .into_par_iter()
        .map(|j| {
            let mut rng = stream_rng(clip.seed, STREAM_FORCES, j as u64);
            let z = DVector::from_iterator(
                n_theta,
                (0..n_theta).map(|_| rng.sample::<f64, _>(StandardNormal)),
            );
            &mean + &root * z
        })
        .collect())
}

/// One mask per force realization: sensor `i` is lost when the predicted
/// steady-state amplitude `|T_i theta|` exceeds the threshold.
pub fn clipping_scenarios(
    frf: &FrfMatrix,
    clip: &ClippingConfig,
) -> Result<(ScenarioSet, ClippingReport)> {
    let forces = force_draws(clip, frf.n_params())?;
    let t = frf.entries();
    let entries: Vec<Vec<f64>> = forces
        .iter()
        .map(|theta| {
            let y = t * theta;
            y.iter()
                .map(|v| if v.abs() > clip.threshold { 0.0 } else { 1.0 })
                .collect()
        })
        .collect();
    let set = ScenarioSet::masks(frf.n_sensors(), entries, "clipping", Some(clip.seed))?;
    let occurrence_pct = set.failure_frequency().iter().map(|f| 100.0 * f).collect();
    let all_clipped = set
        .entries()
        .iter()
        .filter(|m| m.iter().all(|v| *v == 0.0))
        .count();
    let report = ClippingReport {
        threshold: clip.threshold,
        n_realizations: clip.n_realizations,
        seed: clip.seed,
        occurrence_pct,
        all_clipped,
    };
    Ok((set, report))
}

/// Smallest isotropic force variance (found by bisection in log space) for
/// which sensors on `target_level` clip on average in at least
/// `target_rate` of the realizations.
pub fn tune_force_variance(
    frf: &FrfMatrix,
    sensor_levels: &[u32],
    target_level: u32,
    threshold: f64,
    n_realizations: usize,
    seed: u64,
    target_rate: f64,
) -> Result<f64> {
    check_len("sensor levels", frf.n_sensors(), sensor_levels.len())?;
    let top: Vec<usize> = (0..sensor_levels.len())
        .filter(|&i| sensor_levels[i] == target_level)
        .collect();
    if top.is_empty() {
        return Err(OedError::InvalidConfig(format!(
            "no sensors on level {target_level}"
        )));
    }
    if !(target_rate > 0.0 && target_rate <= 1.0) {
        return Err(OedError::InvalidConfig(
            "target clip rate must be in (0, 1]".into(),
        ));
    }
    let p = frf.n_params();
    // Unit-variance responses; scaling by sqrt(v) gives any variance, so the
    // rate is monotone in v for this fixed draw.
    let unit = force_draws(
        &ClippingConfig::isotropic(p, 1.0, threshold, n_realizations, seed),
        p,
    )?;
    let t = frf.entries();
    let amplitudes: Vec<Vec<f64>> = unit
        .iter()
        .map(|z| {
            let y = t * z;
            top.iter().map(|&i| y[i].abs()).collect()
        })
        .collect();
    let rate = |v: f64| {
        let s = v.sqrt();
        let hits: usize = amplitudes
            .iter()
            .map(|a| a.iter().filter(|x| s * **x > threshold).count())
            .sum();
        hits as f64 / (top.len() * n_realizations) as f64
    };
    let (mut lo, mut hi) = (1e-12_f64, 1.0_f64);
    while rate(hi) < target_rate {
        hi *= 10.0;
        if hi > 1e40 {
            return Err(OedError::InvalidConfig(
                "no force variance reaches the target clip rate".into(),
            ));
        }
    }
    for _ in 0..200 {
        let mid = (0.5 * (lo.ln() + hi.ln())).exp();
        if rate(mid) >= target_rate {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi / lo < 1.0 + 1e-12 {
            break;
        }
    }
    Ok(hi)
}
