//! Acceptance checks. Runs without the libtest harness so every criterion
//! prints its own line.

mod common;

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use robust_oed::cli::{criterion_for, load_config, load_problem, Problem};
use robust_oed::config::{OptimizeMode, RunConfig};
use robust_oed::criteria::{double_well, evaluate, gradient, Criterion};
use robust_oed::ha::{
    ha_criterion_mc, ha_criterion_truncated, non_asymptotic_covariance_mc, HAConfig,
};
use robust_oed::inverse::{
    covariance, dropout_covariance, Design, NoiseModel, ScenarioSet, WlsEstimator,
};
use robust_oed::io::DesignFile;
use robust_oed::optimizer::{
    exhaustive_binary, gamma_sweep, solve_relaxed, GammaSweepConfig, OptimizerConfig,
};
use robust_oed::scenarios::{
    bernoulli_scenarios, clipping_scenarios, one_out_scenarios, ClippingConfig, PofMap,
};
use robust_oed::structural::FrfMatrix;

type Check = Result<String, String>;

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within_time(start: Instant, limit_s: f64) -> Result<f64, String> {
    let t = start.elapsed().as_secs_f64();
    ensure(t < limit_s, format!("took {t:.1} s, limit {limit_s} s"))?;
    Ok(t)
}

fn e2s<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn demo(config: &str) -> Result<(RunConfig, Problem), String> {
    let (cfg, _) = load_config(Some(&root().join("configs").join(config))).map_err(e2s)?;
    let problem = load_problem(&cfg).map_err(e2s)?;
    Ok((cfg, problem))
}

fn central_difference(c: &Criterion, frf: &FrfMatrix, d: &Design) -> Vec<f64> {
    let h = 1e-6;
    (0..d.len())
        .map(|i| {
            let at = |delta: f64| {
                let mut w = d.weights().to_vec();
                w[i] += delta;
                let shifted = Design::new(w, d.costs().to_vec(), f64::MAX).unwrap();
                evaluate(c, frf, &shifted).unwrap()
            };
            (at(h) - at(-h)) / (2.0 * h)
        })
        .collect()
}

fn gradient_correctness() -> Check {
    let start = Instant::now();
    let mut rng = common::rng(101);
    let noise = NoiseModel::new(0.5).unwrap();
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let n = rng.random_range(10..=50);
        let p = rng.random_range(2..=6);
        let frf = common::random_frf(&mut rng, n, p);
        let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..1.0)).collect();
        let s: Vec<f64> = (0..n).map(|_| rng.random_range(0.3..1.0)).collect();
        let d = Design::with_unit_costs(w, n as f64).map_err(e2s)?;
        let crits = [
            Criterion::classical(noise),
            Criterion::pof(s, noise).map_err(e2s)?,
            Criterion::scenario_avg(one_out_scenarios(n), noise).map_err(e2s)?,
        ];
        for c in &crits {
            let g = gradient(c, &frf, &d).map_err(e2s)?;
            let fd = central_difference(c, &frf, &d);
            let diff = g
                .iter()
                .zip(&fd)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            let scale = fd.iter().map(|x| x.abs()).fold(0.0, f64::max);
            worst = worst.max(diff / scale);
        }
    }
    ensure(worst < 1e-6, format!("max relative error {worst:.2e}"))?;
    let t = within_time(start, 10.0)?;
    Ok(format!(
        "max relative error {worst:.2e} over 60 gradients, {t:.1} s"
    ))
}

fn covariance_oracle() -> Check {
    let start = Instant::now();
    let mut rng = common::rng(202);
    let (n, p, n_draws) = (12, 3, 100_000);
    let frf = common::random_frf(&mut rng, n, p);
    let sigma = 0.8;
    let noise = NoiseModel::new(sigma).unwrap();
    let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.3..1.0)).collect();
    let d = Design::with_unit_costs(w.clone(), n as f64).map_err(e2s)?;
    let c = covariance(&frf, &d, &noise).map_err(e2s)?;
    let est = WlsEstimator::new(&frf, &d, None).map_err(e2s)?;
    let theta0 = DVector::from_vec(vec![1.0, -2.0, 0.5]);
    let clean = frf.entries() * &theta0;

    // weights act as precisions: sensor i has noise variance sigma^2 / w_i
    let errors: Vec<DVector<f64>> = (0..n_draws)
        .map(|_| {
            let y = DVector::from_fn(n, |i, _| {
                clean[i] + sigma / w[i].sqrt() * rng.sample::<f64, _>(StandardNormal)
            });
            est.estimate(&y) - &theta0
        })
        .collect();
    let nf = n_draws as f64;
    let mean = errors.iter().fold(DVector::zeros(p), |a, e| a + e) / nf;
    let mut worst_z: f64 = 0.0;
    for i in 0..p {
        for j in 0..p {
            let prods: Vec<f64> = errors
                .iter()
                .map(|e| (e[i] - mean[i]) * (e[j] - mean[j]))
                .collect();
            let m = prods.iter().sum::<f64>() / nf;
            let v = prods.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (nf - 1.0);
            worst_z = worst_z.max((m - c[(i, j)]).abs() / (v / nf).sqrt());
        }
    }
    let mse = errors.iter().map(|e| e.norm_squared()).sum::<f64>() / nf;
    let rel = (mse - c.trace()).abs() / c.trace();
    ensure(
        worst_z <= 3.0,
        format!("entry off by {worst_z:.2} standard errors"),
    )?;
    ensure(
        rel < 0.02,
        format!("MSE differs from trace by {:.2}%", 100.0 * rel),
    )?;
    let t = within_time(start, 30.0)?;
    Ok(format!(
        "max deviation {worst_z:.2} SE, MSE vs trace {:.3}%, {t:.1} s",
        100.0 * rel
    ))
}

fn reduction_identities() -> Check {
    let mut rng = common::rng(303);
    let noise = NoiseModel::new(1.3).unwrap();
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let n = rng.random_range(6..20);
        let frf = common::random_frf(&mut rng, n, 3);
        let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..1.0)).collect();
        let d = Design::with_unit_costs(w.clone(), n as f64).map_err(e2s)?;
        let classical = evaluate(&Criterion::classical(noise), &frf, &d).map_err(e2s)?;

        let pof = Criterion::pof(vec![1.0; n], noise).map_err(e2s)?;
        worst = worst.max((evaluate(&pof, &frf, &d).map_err(e2s)? - classical).abs());

        let all_ones = ScenarioSet::masks(n, vec![vec![1.0; n]], "all-ones", None).map_err(e2s)?;
        let avg = Criterion::scenario_avg(all_ones, noise).map_err(e2s)?;
        worst = worst.max((evaluate(&avg, &frf, &d).map_err(e2s)? - classical).abs());

        let dead = rng.random_range(0..n);
        let mut s = vec![1.0; n];
        s[dead] = 0.0;
        let dropped = Criterion::pof(s, noise).map_err(e2s)?;
        let keep: Vec<usize> = (0..n).filter(|&i| i != dead).collect();
        let rows = DMatrix::from_fn(n - 1, 3, |r, c| frf.entries()[(keep[r], c)]);
        let deleted_frf = FrfMatrix::from_matrix(rows).map_err(e2s)?;
        let deleted =
            Design::with_unit_costs(keep.iter().map(|&i| w[i]).collect(), n as f64).map_err(e2s)?;
        let expected =
            evaluate(&Criterion::classical(noise), &deleted_frf, &deleted).map_err(e2s)?;
        worst = worst.max((evaluate(&dropped, &frf, &d).map_err(e2s)? - expected).abs());
    }
    ensure(worst <= 1e-12, format!("largest discrepancy {worst:.2e}"))?;
    Ok(format!(
        "largest discrepancy {worst:.2e} over 30 identities"
    ))
}

fn binary_oracle() -> Check {
    let start = Instant::now();
    let mut rng = common::rng(404);
    let noise = NoiseModel::new(1.0).unwrap();
    let opt = OptimizerConfig::default();
    let sweep = GammaSweepConfig::default();
    let mut worst_gap: f64 = 0.0;
    for case in 0..10 {
        let frf = common::random_frf(&mut rng, 10, 3);
        let c = Criterion::classical(noise);
        let d0 = Design::uniform_feasible(vec![1.0; 10], 4.0).map_err(e2s)?;
        let exact = exhaustive_binary(&frf, &c, &[1.0; 10], 4.0).map_err(e2s)?;
        let swept = gamma_sweep(&frf, &c, &d0, &sweep, &opt).map_err(e2s)?;
        let relaxed = solve_relaxed(&frf, &c, &d0, 0.0, &opt).map_err(e2s)?;
        ensure(
            swept.design.is_binary(),
            format!("case {case}: sweep design not binary"),
        )?;
        let gap = (swept.criterion - exact.criterion) / exact.criterion.abs();
        worst_gap = worst_gap.max(gap);
        let slack = 1e-9 * exact.criterion.abs().max(1.0);
        ensure(
            relaxed.criterion <= exact.criterion + slack
                && relaxed.criterion <= swept.criterion + slack,
            format!(
                "case {case}: relaxed {} above binary {}",
                relaxed.criterion, exact.criterion
            ),
        )?;
    }
    ensure(
        worst_gap <= 0.05,
        format!("relative gap {:.2}%", 100.0 * worst_gap),
    )?;
    let t = within_time(start, 60.0)?;
    Ok(format!(
        "worst relative gap {:.3}%, {t:.1} s",
        100.0 * worst_gap
    ))
}

fn read_design(path: &Path) -> Result<Design, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let f: DesignFile = serde_json::from_str(&text).map_err(e2s)?;
    Design::new(f.weights, f.costs, f.budget).map_err(e2s)
}

/// Mean one-out logdet of a design from the CLI summary.
fn summary_mean(dir: &Path, label: &str) -> Result<f64, String> {
    let text = std::fs::read_to_string(dir.join("summary_1out_support.csv")).map_err(e2s)?;
    text.lines()
        .map(|l| l.split(',').collect::<Vec<_>>())
        .find(|f| f[0] == label && f[1] == "logdet" && f[2] == "mean")
        .and_then(|f| f[3].parse().ok())
        .ok_or_else(|| format!("no mean logdet for {label}"))
}

fn robust_dominance(protocol: &Path) -> Check {
    let (cfg, problem) = demo("oneout.json")?;
    let frf = &problem.frf;
    let one_out = criterion_for(OptimizeMode::RobustOneout, &cfg, &problem).map_err(e2s)?;
    let dir = protocol.join("oneout");
    let classical = read_design(&dir.join("design_classical_fractional.json"))?;
    let robust = read_design(&dir.join("design_robust-oneout_fractional.json"))?;
    let rc = evaluate(&one_out, frf, &classical).map_err(e2s)?;
    let rr = evaluate(&one_out, frf, &robust).map_err(e2s)?;
    ensure(
        rr <= rc + 1e-6 * rc.abs(),
        format!("one-out: robust {rr} > classical {rc}"),
    )?;
    let (mr, mc) = (
        summary_mean(&dir, "robust-oneout_fractional")?,
        summary_mean(&dir, "classical_fractional")?,
    );
    ensure(
        mr <= mc,
        format!("mean one-out logdet: robust {mr} > classical {mc}"),
    )?;

    let (cfg, problem) = demo("pof.json")?;
    let pof = criterion_for(OptimizeMode::RobustPof, &cfg, &problem).map_err(e2s)?;
    let dir = protocol.join("pof");
    let classical = read_design(&dir.join("design_classical_binary.json"))?;
    let robust = read_design(&dir.join("design_robust-pof_binary.json"))?;
    let pc = evaluate(&pof, &problem.frf, &classical).map_err(e2s)?;
    let pr = evaluate(&pof, &problem.frf, &robust).map_err(e2s)?;
    ensure(
        pr <= pc + 1e-6 * pc.abs(),
        format!("pof: robust {pr} > classical {pc}"),
    )?;
    Ok(format!(
        "one-out {rr:.6} vs {rc:.6}, pof {pr:.4} vs {pc:.4}, mean one-out logdet {mr:.4} vs {mc:.4}"
    ))
}

fn double_well_behavior() -> Check {
    let binary = Design::with_unit_costs(vec![1.0, 0.0, 1.0, 0.0], 4.0).map_err(e2s)?;
    ensure(
        double_well(&binary) <= 1e-12,
        "penalty nonzero on a binary design",
    )?;
    let near = Design::with_unit_costs(vec![1.0, 1e-6, 1.0, 0.0], 4.0).map_err(e2s)?;
    ensure(
        double_well(&near) > 1e-12,
        "penalty vanishes off the vertices",
    )?;

    let grid = GammaSweepConfig::default().grid();
    ensure(grid.len() == 100, format!("grid has {} points", grid.len()))?;
    let worst = grid
        .iter()
        .enumerate()
        .map(|(k, g)| {
            let want = 10f64.powf(-1.0 + 6.0 * k as f64 / 99.0);
            (g - want).abs() / want
        })
        .fold(0.0, f64::max);
    ensure(
        worst < 1e-12,
        format!("grid deviates from log spacing by {worst:.1e}"),
    )?;

    let (cfg, problem) = demo("demo.json")?;
    let c = criterion_for(OptimizeMode::Classical, &cfg, &problem).map_err(e2s)?;
    let n = problem.frf.n_sensors();
    let d0 = Design::uniform_feasible(vec![1.0; n], cfg.budget).map_err(e2s)?;
    let gamma = *grid.last().unwrap();
    let sol = solve_relaxed(&problem.frf, &c, &d0, gamma, &cfg.optimizer).map_err(e2s)?;
    let dist = sol.design.binary_distance();
    ensure(
        dist <= 1e-3,
        format!("design at gamma {gamma:e} is {dist:.2e} from binary"),
    )?;
    Ok(format!(
        "100-point grid [1e-1, 1e5]; binary distance {dist:.2e} at gamma 1e5"
    ))
}

fn appendix_oracles() -> Check {
    let start = Instant::now();
    let mut rng = common::rng(707);
    let frf = common::random_frf(&mut rng, 5, 2);
    let d = Design::with_unit_costs(vec![1.0; 5], 5.0).map_err(e2s)?;
    let ha = HAConfig {
        q: 0.1,
        truncation_order: 3,
        mc_samples: 100_000,
        seed: 17,
    };
    let exact = ha_criterion_truncated(&frf, &d, &ha).map_err(e2s)?;
    let (mc, se) = ha_criterion_mc(&frf, &d, &ha).map_err(e2s)?;
    let z = (exact - mc).abs() / se;
    ensure(z <= 3.0, format!("series {exact} vs MC {mc}: {z:.2} SE"))?;

    let noise = NoiseModel::new(1.0).unwrap();
    let survival = vec![0.9; 5];
    let cov =
        non_asymptotic_covariance_mc(&frf, &d, &survival, &noise, 100_000, 18).map_err(e2s)?;
    let lower = dropout_covariance(&frf, &d, &survival, &noise).map_err(e2s)?;
    let gap = (&cov.mean - lower).symmetric_eigen().eigenvalues.min();
    let se_scale = cov.std_err.max();
    ensure(
        gap >= -3.0 * se_scale,
        format!("smallest eigenvalue {gap:.3e}"),
    )?;
    let t = within_time(start, 60.0)?;
    Ok(format!(
        "series vs MC {z:.2} SE; Jensen gap eigenvalue {gap:.3e} (SE {se_scale:.1e}), {t:.1} s"
    ))
}

fn oed(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_oed"))
        .current_dir(root())
        .args(args)
        .output()
        .map_err(e2s)?;
    ensure(
        out.status.success(),
        format!(
            "oed {}: {}",
            args.join(" "),
            String::from_utf8_lossy(&out.stderr)
        ),
    )
}

fn snapshot(dir: &Path) -> std::collections::BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| {
            !p.file_name()
                .unwrap()
                .to_string_lossy()
                .starts_with("manifest_")
        })
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                std::fs::read(&p).unwrap(),
            )
        })
        .collect()
}

fn scenario_generators(scratch: &Path) -> Check {
    let q = vec![0.05, 0.05, 0.3, 0.5, 0.5, 0.3, 0.05, 0.9];
    let n_samps = 100_000;
    let set =
        bernoulli_scenarios(&PofMap::new(q.clone()).map_err(e2s)?, n_samps, 808).map_err(e2s)?;
    let worst_z = set
        .failure_frequency()
        .iter()
        .zip(&q)
        .map(|(f, q)| (f - q).abs() / (q * (1.0 - q) / n_samps as f64).sqrt())
        .fold(0.0, f64::max);
    ensure(
        worst_z <= 3.0,
        format!("failure rate off by {worst_z:.2} SE"),
    )?;

    let (_, problem) = demo("demo.json")?;
    let n = problem.frf.n_sensors();
    ensure(
        one_out_scenarios(n).len() == n,
        "one-out set size differs from n_y",
    )?;

    let mut prev: Option<Vec<f64>> = None;
    for threshold in [100.0, 300.0, 500.0, 1000.0, 3000.0] {
        let clip = ClippingConfig::isotropic(problem.frf.n_params(), 1e6, threshold, 100, 9);
        let (_, report) = clipping_scenarios(&problem.frf, &clip).map_err(e2s)?;
        if let Some(p) = &prev {
            ensure(
                report.occurrence_pct.iter().zip(p).all(|(a, b)| a <= b),
                format!("clipping occurrence increased at threshold {threshold}"),
            )?;
        }
        prev = Some(report.occurrence_pct);
    }

    let cfg = root().join("configs/pof.json");
    let cfg = cfg.to_str().unwrap();
    let mut runs = Vec::new();
    for (name, threads) in [("a", "1"), ("b", "1"), ("c", "4")] {
        let dir = scratch.join(name);
        let d = dir.to_str().unwrap();
        let base = ["--config", cfg, "--out-dir", d, "--threads", threads];
        oed(&[&base[..], &["build-model"]].concat())?;
        oed(&[
            &base[..],
            &["scenarios", "--kind", "bernoulli", "--n-samps", "20000"],
        ]
        .concat())?;
        oed(&[&base[..], &["optimize", "--mode", "classical"]].concat())?;
        let design = dir.join("design_classical_binary.json");
        oed(&[
            &base[..],
            &["evaluate", "--design", design.to_str().unwrap()],
        ]
        .concat())?;
        runs.push(snapshot(&dir));
    }
    ensure(runs[0] == runs[1], "outputs differ between identical runs")?;
    ensure(runs[0] == runs[2], "outputs differ between thread counts")?;
    Ok(format!(
        "Bernoulli rates within {worst_z:.2} SE; {} output files byte-identical across runs and thread counts",
        runs[0].len()
    ))
}

fn protocol_reproduction(out: &Path) -> Check {
    let start = Instant::now();
    let status = Command::new("bash")
        .current_dir(root())
        .env("OED", env!("CARGO_BIN_EXE_oed"))
        .arg("scripts/protocol.sh")
        .arg(out)
        .stdout(std::process::Stdio::null())
        .status()
        .map_err(e2s)?;
    ensure(
        status.success(),
        format!("protocol script exited with {status}"),
    )?;
    let t = start.elapsed().as_secs_f64();
    let expected = [
        ("oneout", "summary_1out_support.csv"),
        ("oneout", "summary_2out_support.csv"),
        ("pof", "summary_bernoulli.csv"),
        ("clipping", "summary_clipping.csv"),
        ("clipping", "clipping_report.json"),
    ];
    let mut reports = 0;
    for (study, file) in expected {
        let path = out.join(study).join(file);
        ensure(path.exists(), format!("missing {}", path.display()))?;
    }
    for study in ["oneout", "pof", "clipping"] {
        reports += std::fs::read_dir(out.join(study))
            .map_err(e2s)?
            .filter(|e| {
                let name = e
                    .as_ref()
                    .unwrap()
                    .file_name()
                    .to_string_lossy()
                    .into_owned();
                name.starts_with("report_") && name.ends_with(".csv")
            })
            .count();
    }
    let baselines = std::fs::read_to_string(out.join("oneout/summary_1out_support.csv"))
        .map_err(e2s)?
        .lines()
        .filter_map(|l| {
            l.split(',')
                .next()
                .filter(|d| d.starts_with("random_"))
                .map(String::from)
        })
        .collect::<std::collections::BTreeSet<_>>()
        .len();
    ensure(
        baselines == 12,
        format!("{baselines} random baselines in the one-out summary"),
    )?;
    let (_, problem) = demo("demo.json")?;
    ensure(
        problem.frf.n_sensors() == 267 && problem.frf.n_params() == 6,
        "demo problem is not 267 x 6",
    )?;
    ensure(t < 600.0, format!("took {t:.0} s, limit 600 s"))?;
    Ok(format!("3 studies, {reports} report CSVs, {t:.0} s"))
}

fn main() {
    let scratch = tempfile::tempdir().expect("scratch dir");
    let protocol = scratch.path().join("protocol");

    // the protocol runs first because the dominance check reads its designs
    let nine = protocol_reproduction(&protocol);
    let results: Vec<(u32, &str, Check)> = vec![
        (1, "gradient correctness", gradient_correctness()),
        (2, "covariance oracle", covariance_oracle()),
        (3, "reduction identities", reduction_identities()),
        (4, "binary oracle", binary_oracle()),
        (5, "robust dominance", robust_dominance(&protocol)),
        (6, "double-well behavior", double_well_behavior()),
        (7, "appendix oracles", appendix_oracles()),
        (
            8,
            "scenario generators",
            scenario_generators(&scratch.path().join("determinism")),
        ),
        (9, "protocol reproduction", nine),
    ];
    let mut failed = 0;
    for (k, name, r) in &results {
        match r {
            Ok(msg) => println!("criterion {k} ({name}): PASS: {msg}"),
            Err(msg) => {
                failed += 1;
                println!("criterion {k} ({name}): FAIL: {msg}");
            }
        }
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
