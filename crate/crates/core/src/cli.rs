//! Command implementations behind the `oed` binary.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::{OptimizeMode, RunConfig, ScenarioSpec};
use crate::criteria::{Criterion, IllPosedPolicy};
use crate::error::{OedError, Result};
use crate::inverse::{Design, NoiseModel, ScenarioSet};
use crate::io::{
    read_frf_csv, read_json, read_scenarios_csv, write_frf_csv, write_json, write_scenarios_csv,
    write_sweep_csv, write_trace_csv, DesignFile, ScenarioSummary,
};
use crate::optimizer::{gamma_sweep, solve_relaxed, InitKind};
use crate::postproc::{
    logdet_over_scenarios, mse_over_failures, random_designs, write_summary_csv, Metric,
    NominalParameterDistribution, PerformanceReport,
};
use crate::rng::config_hash;
use crate::scenarios::{
    bernoulli_scenarios, clipping_scenarios, k_out_scenarios, pof_from_levels, tune_force_variance,
    ClippingConfig, ClippingReport, PofMap,
};
use crate::structural::{assemble_tiered_model, compute_frf, FrfMatrix};

/// Loaded FRF plus the structural level of each sensor when known.
#[derive(Debug, Clone)]
pub struct Problem {
    pub frf: FrfMatrix,
    pub levels: Option<Vec<u32>>,
}

pub fn load_config(path: Option<&Path>) -> Result<(RunConfig, String)> {
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)?;
            let cfg = RunConfig::from_json(&text).map_err(|e| match e {
                OedError::InvalidConfig(m) => {
                    OedError::InvalidConfig(format!("{}: {m}", p.display()))
                }
                other => other,
            })?;
            Ok((cfg, config_hash(text.as_bytes())))
        }
        None => {
            let cfg = RunConfig::default();
            let text = serde_json::to_string(&cfg)?;
            Ok((cfg, config_hash(text.as_bytes())))
        }
    }
}

pub fn load_problem(cfg: &RunConfig) -> Result<Problem> {
    if let Some(path) = &cfg.frf_csv {
        return Ok(Problem {
            frf: read_frf_csv(path)?,
            levels: None,
        });
    }
    let tower = cfg.model.tower()?;
    let model = assemble_tiered_model(&tower)?;
    let frf = compute_frf(&model, tower.frequency, tower.extraction_mode)?;
    Ok(Problem {
        frf,
        levels: Some(model.sensor_levels()),
    })
}

fn noise(cfg: &RunConfig) -> Result<NoiseModel> {
    NoiseModel::new(cfg.noise_sigma)
}

fn costs(cfg: &RunConfig, n: usize) -> Vec<f64> {
    cfg.costs.clone().unwrap_or_else(|| vec![1.0; n])
}

pub fn pof_map(cfg: &RunConfig, problem: &Problem) -> Result<PofMap> {
    if let Some(q) = &cfg.pof.q {
        return PofMap::new(q.clone());
    }
    let levels = problem.levels.as_ref().ok_or_else(|| {
        OedError::InvalidConfig(
            "pof.q is required when the FRF is loaded without structural levels".into(),
        )
    })?;
    pof_from_levels(levels, &cfg.pof.level_rule)
}

pub fn clipping_set(
    cfg: &RunConfig,
    problem: &Problem,
) -> Result<(ScenarioSet, ClippingReport, f64)> {
    let spec = &cfg.clipping;
    let p = problem.frf.n_params();
    let variance = match spec.force_variance {
        Some(v) => v,
        None => {
            let levels = problem.levels.as_ref().ok_or_else(|| {
                OedError::InvalidConfig(
                    "clipping.force_variance is required without structural levels".into(),
                )
            })?;
            let target = spec
                .target_level
                .unwrap_or_else(|| levels.iter().copied().max().unwrap_or(0));
            tune_force_variance(
                &problem.frf,
                levels,
                target,
                spec.threshold,
                spec.n_realizations,
                cfg.seed,
                spec.target_rate,
            )?
        }
    };
    let clip =
        ClippingConfig::isotropic(p, variance, spec.threshold, spec.n_realizations, cfg.seed);
    let (set, report) = clipping_scenarios(&problem.frf, &clip)?;
    Ok((set, report, variance))
}

/// Scenario set for a spec; `support_only` sets are built on `design`.
pub fn scenario_set(
    spec: &ScenarioSpec,
    cfg: &RunConfig,
    problem: &Problem,
    design: Option<&Design>,
) -> Result<ScenarioSet> {
    let n = problem.frf.n_sensors();
    match spec {
        ScenarioSpec::NoFailure => Ok(ScenarioSet::no_failure(n)),
        ScenarioSpec::KOut {
            k,
            support_only: false,
        } => k_out_scenarios(n, *k),
        ScenarioSpec::KOut {
            k,
            support_only: true,
        } => {
            let design = design
                .ok_or_else(|| OedError::InvalidConfig("support_only needs a design".into()))?;
            let support = design.support();
            let local = k_out_scenarios(support.len(), *k)?;
            let entries = local
                .entries()
                .iter()
                .map(|m| {
                    let mut full = vec![1.0; n];
                    for (slot, &i) in support.iter().enumerate() {
                        full[i] = m[slot];
                    }
                    full
                })
                .collect();
            ScenarioSet::masks(n, entries, &format!("{k}-out-support"), None)
        }
        ScenarioSpec::Bernoulli { n_samps } => {
            bernoulli_scenarios(&pof_map(cfg, problem)?, *n_samps, cfg.seed)
        }
        ScenarioSpec::Clipping => Ok(clipping_set(cfg, problem)?.0),
        ScenarioSpec::File { csv, summary } => {
            let s: ScenarioSummary = read_json(summary)?;
            let set = read_scenarios_csv(csv, &s)?;
            if set.n_sensors() != n {
                return Err(OedError::DimensionMismatch {
                    what: "scenario file sensors",
                    expected: n,
                    got: set.n_sensors(),
                });
            }
            Ok(set)
        }
    }
}

pub fn criterion_for(mode: OptimizeMode, cfg: &RunConfig, problem: &Problem) -> Result<Criterion> {
    let noise = noise(cfg)?;
    match mode {
        OptimizeMode::Classical => Ok(Criterion::classical(noise)),
        OptimizeMode::RobustOneout => {
            Criterion::scenario_avg(k_out_scenarios(problem.frf.n_sensors(), 1)?, noise)
        }
        OptimizeMode::RobustPof => Criterion::pof(pof_map(cfg, problem)?.survival(), noise),
        OptimizeMode::RobustClipping => {
            Criterion::scenario_avg(clipping_set(cfg, problem)?.0, noise)
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ModelSummary {
    pub n_sensors: usize,
    pub n_params: usize,
    pub frequency: f64,
    pub singular_values: Vec<f64>,
    pub condition_number: f64,
    pub sensor_levels: Option<Vec<u32>>,
}

pub fn model_summary(problem: &Problem) -> ModelSummary {
    let sv = problem
        .frf
        .entries()
        .clone()
        .svd(false, false)
        .singular_values;
    let mut s: Vec<f64> = sv.iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    ModelSummary {
        n_sensors: problem.frf.n_sensors(),
        n_params: problem.frf.n_params(),
        frequency: problem.frf.frequency(),
        condition_number: s[0] / s[s.len() - 1],
        singular_values: s,
        sensor_levels: problem.levels.clone(),
    }
}

pub fn cmd_build_model(cfg: &RunConfig, out: &Path) -> Result<(ModelSummary, Vec<PathBuf>)> {
    let problem = load_problem(cfg)?;
    let summary = model_summary(&problem);
    let frf_path = out.join("frf.csv");
    write_frf_csv(&frf_path, &problem.frf)?;
    let model_path = out.join("model.json");
    #[derive(Serialize)]
    struct ModelFile<'a> {
        tower: Option<crate::structural::TieredTowerConfig>,
        summary: &'a ModelSummary,
    }
    let tower = if cfg.frf_csv.is_none() {
        Some(cfg.model.tower()?)
    } else {
        None
    };
    write_json(
        &model_path,
        &ModelFile {
            tower,
            summary: &summary,
        },
    )?;
    Ok((summary, vec![model_path, frf_path]))
}

pub fn cmd_optimize(
    cfg: &RunConfig,
    mode: OptimizeMode,
    out: &Path,
) -> Result<(DesignFile, Vec<PathBuf>)> {
    let problem = load_problem(cfg)?;
    let n = problem.frf.n_sensors();
    let criterion = criterion_for(mode, cfg, &problem)?;
    let design0 = Design::uniform_feasible(costs(cfg, n), cfg.budget)?;
    let kind = if cfg.binary { "binary" } else { "fractional" };
    let label = format!("{}_{kind}", mode.as_str());
    let mut outputs = Vec::new();

    let file = if cfg.binary {
        let res = gamma_sweep(
            &problem.frf,
            &criterion,
            &design0,
            &cfg.sweep,
            &cfg.optimizer,
        )?;
        let sweep_path = out.join(format!("sweep_{label}.csv"));
        write_sweep_csv(&sweep_path, &res.entries)?;
        outputs.push(sweep_path);
        let chosen = res
            .selected_gamma
            .and_then(|g| res.solutions.iter().find(|s| s.gamma == g))
            .unwrap_or(&res.solutions[res.solutions.len() - 1]);
        let trace_path = out.join(format!("trace_{label}.csv"));
        write_trace_csv(&trace_path, &chosen.trace)?;
        outputs.push(trace_path);
        DesignFile {
            weights: res.design.weights().to_vec(),
            costs: res.design.costs().to_vec(),
            budget: res.design.budget(),
            binary: res.design.is_binary(),
            criterion: mode.as_str().into(),
            criterion_value: res.criterion,
            gamma: res.selected_gamma,
            seed: cfg.seed,
            fallback: res.fallback,
            label: label.clone(),
        }
    } else {
        let mut opt = cfg.optimizer;
        opt.init = InitKind::Given;
        let sol = solve_relaxed(&problem.frf, &criterion, &design0, 0.0, &opt)?;
        let trace_path = out.join(format!("trace_{label}.csv"));
        write_trace_csv(&trace_path, &sol.trace)?;
        outputs.push(trace_path);
        if let Some(w) = &sol.warning {
            eprintln!("warning: {w}");
        }
        DesignFile {
            weights: sol.design.weights().to_vec(),
            costs: sol.design.costs().to_vec(),
            budget: sol.design.budget(),
            binary: sol.design.is_binary(),
            criterion: mode.as_str().into(),
            criterion_value: sol.criterion,
            gamma: Some(0.0),
            seed: cfg.seed,
            fallback: false,
            label: label.clone(),
        }
    };
    let design_path = out.join(format!("design_{label}.json"));
    write_json(&design_path, &file)?;
    outputs.push(design_path);
    Ok((file, outputs))
}

fn design_label(path: &Path, file: &DesignFile) -> String {
    if !file.label.is_empty() {
        return file.label.clone();
    }
    path.file_stem()
        .map(|s| {
            s.to_string_lossy()
                .trim_start_matches("design_")
                .to_string()
        })
        .unwrap_or_else(|| "design".into())
}

pub fn cmd_evaluate(
    cfg: &RunConfig,
    extra_designs: &[PathBuf],
    policy: IllPosedPolicy,
    config_hash: &str,
    out: &Path,
) -> Result<Vec<PathBuf>> {
    let problem = load_problem(cfg)?;
    let spec = &cfg.evaluate;
    let noise = noise(cfg)?;
    let mut designs: Vec<(String, Design)> = Vec::new();
    let mut seen = BTreeSet::new();
    for path in spec.designs.iter().chain(extra_designs) {
        let file: DesignFile = read_json(path)?;
        let mut label = design_label(path, &file);
        while !seen.insert(label.clone()) {
            label.push('_');
        }
        let d = file.design()?;
        if d.len() != problem.frf.n_sensors() {
            return Err(OedError::DimensionMismatch {
                what: "design weights",
                expected: problem.frf.n_sensors(),
                got: d.len(),
            });
        }
        designs.push((label, d));
    }
    if designs.is_empty() {
        return Err(OedError::InvalidConfig("no designs to evaluate".into()));
    }
    if let Some(rb) = &spec.random_baselines {
        let support = rb.support_size.unwrap_or_else(|| {
            designs
                .iter()
                .map(|(_, d)| d.support().len())
                .max()
                .unwrap_or(1)
        });
        let budget = designs[0].1.budget();
        for (k, d) in random_designs(
            problem.frf.n_sensors(),
            support,
            rb.count,
            cfg.seed,
            rb.kind,
            budget,
        )?
        .into_iter()
        .enumerate()
        {
            designs.push((format!("random_{k:02}"), d));
        }
    }
    let dist = spec.theta0.clone().unwrap_or_else(|| {
        NominalParameterDistribution::with_seed(problem.frf.n_params(), cfg.seed)
    });

    let mut outputs = Vec::new();
    let mut shared: Option<(String, ScenarioSet)> = None;
    for scen in &spec.scenarios {
        let scen_label = scen.label();
        let mut summary: Vec<(String, PerformanceReport)> = Vec::new();
        for (label, design) in &designs {
            let support_only = matches!(
                scen,
                ScenarioSpec::KOut {
                    support_only: true,
                    ..
                }
            );
            let set = if support_only {
                scenario_set(scen, cfg, &problem, Some(design))?
            } else {
                match &shared {
                    Some((l, s)) if *l == scen_label => s.clone(),
                    _ => {
                        let s = scenario_set(scen, cfg, &problem, None)?;
                        shared = Some((scen_label.clone(), s.clone()));
                        s
                    }
                }
            };
            let mut reports: Vec<PerformanceReport> = Vec::new();
            if spec.metrics.contains(&Metric::Logdet) {
                reports.push(logdet_over_scenarios(
                    &problem.frf,
                    design,
                    &set,
                    &noise,
                    spec.fractional_renorm,
                    policy,
                )?);
            }
            if spec.metrics.iter().any(|m| *m != Metric::Logdet) {
                let (mse, pmse) = mse_over_failures(
                    &problem.frf,
                    design,
                    &set,
                    &dist,
                    &noise,
                    spec.n_test,
                    cfg.seed,
                    policy,
                )?;
                if spec.metrics.contains(&Metric::EmpiricalMse) {
                    reports.push(mse);
                }
                if spec.metrics.contains(&Metric::EmpiricalPmse) {
                    reports.push(pmse);
                }
            }
            for mut r in reports {
                r.config_hash = Some(config_hash.to_string());
                r.seeds.master = Some(cfg.seed);
                r.display_range = spec.display_range;
                let stem = format!("report_{label}_{scen_label}_{}", r.metric.as_str());
                let csv = out.join(format!("{stem}.csv"));
                let json = out.join(format!("{stem}.json"));
                r.write_csv(&csv)?;
                r.write_json(&json)?;
                outputs.push(csv);
                outputs.push(json);
                summary.push((label.clone(), r));
            }
        }
        let path = out.join(format!("summary_{scen_label}.csv"));
        let refs: Vec<(String, &PerformanceReport)> =
            summary.iter().map(|(l, r)| (l.clone(), r)).collect();
        write_summary_csv(&path, &refs)?;
        outputs.push(path);
    }
    Ok(outputs)
}

pub fn cmd_scenarios(cfg: &RunConfig, spec: &ScenarioSpec, out: &Path) -> Result<Vec<PathBuf>> {
    let problem = load_problem(cfg)?;
    let label = spec.label();
    let mut outputs = Vec::new();
    let set = if let ScenarioSpec::Clipping = spec {
        let (set, report, variance) = clipping_set(cfg, &problem)?;
        #[derive(Serialize)]
        struct ClipFile<'a> {
            force_variance: f64,
            #[serde(flatten)]
            report: &'a ClippingReport,
        }
        let path = out.join("clipping_report.json");
        write_json(
            &path,
            &ClipFile {
                force_variance: variance,
                report: &report,
            },
        )?;
        outputs.push(path);
        set
    } else {
        scenario_set(spec, cfg, &problem, None)?
    };
    let csv = out.join(format!("scenarios_{label}.csv"));
    let json = out.join(format!("scenarios_{label}.json"));
    write_scenarios_csv(&csv, &set)?;
    write_json(&json, &ScenarioSummary::of(&set))?;
    outputs.push(csv);
    outputs.push(json);
    Ok(outputs)
}
