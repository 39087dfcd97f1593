mod common;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use robust_oed::criteria::{double_well, evaluate, evaluate_with_gradient, gradient, Criterion};
use robust_oed::inverse::{
    covariance, dropout_covariance, wls_estimate, Design, NoiseModel, ScenarioSet,
};
use robust_oed::optimizer::{project_feasible, round_design};
use robust_oed::scenarios::{bernoulli_scenarios, k_out_scenarios, one_out_scenarios, PofMap};
use robust_oed::structural::FrfMatrix;

fn frf_strategy(
    n: std::ops::Range<usize>,
    p: std::ops::Range<usize>,
) -> impl Strategy<Value = FrfMatrix> {
    (n, p).prop_flat_map(|(n, p)| {
        proptest::collection::vec(-1.0f64..1.0, n * p).prop_filter_map("rank", move |v| {
            FrfMatrix::from_matrix(DMatrix::from_row_slice(n, p, &v)).ok()
        })
    })
}

fn weights(n: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(0.2f64..1.0, n)
}

fn noise() -> NoiseModel {
    NoiseModel::new(0.7).unwrap()
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    let scale = b.iter().map(|x| x.abs()).fold(0.0, f64::max);
    diff / scale.max(1e-12)
}

fn central_difference(crit: &Criterion, frf: &FrfMatrix, d: &Design) -> Vec<f64> {
    let h = 1e-6;
    (0..d.len())
        .map(|i| {
            let mut up = d.weights().to_vec();
            let mut dn = d.weights().to_vec();
            up[i] += h;
            dn[i] -= h;
            let f = |w: Vec<f64>| {
                let dd = Design::new(w, d.costs().to_vec(), f64::MAX).unwrap();
                evaluate(crit, frf, &dd).unwrap()
            };
            (f(up) - f(dn)) / (2.0 * h)
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn projection_is_feasible_and_idempotent(
        v in proptest::collection::vec(-2.0f64..3.0, 1..20),
        budget in 0.1f64..6.0,
        cost_seed in 0.5f64..2.0,
    ) {
        let costs: Vec<f64> = (0..v.len()).map(|i| cost_seed + (i % 3) as f64 * 0.25).collect();
        let w = project_feasible(&v, &costs, budget).unwrap();
        prop_assert!(w.iter().all(|x| (0.0..=1.0).contains(x)));
        let spent: f64 = w.iter().zip(&costs).map(|(a, b)| a * b).sum();
        prop_assert!(spent <= budget);
        let again = project_feasible(&w, &costs, budget).unwrap();
        prop_assert_eq!(again, w);
    }

    #[test]
    fn gradients_match_finite_differences(
        frf in frf_strategy(6..14, 2..4),
        seed in any::<u64>(),
    ) {
        let n = frf.n_sensors();
        let mut rng = common::rng(seed);
        use rand::Rng;
        let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.3..1.0)).collect();
        let s: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..1.0)).collect();
        let d = Design::with_unit_costs(w, n as f64).unwrap();
        let crits = [
            Criterion::classical(noise()),
            Criterion::pof(s, noise()).unwrap(),
            Criterion::scenario_avg(one_out_scenarios(n), noise()).unwrap(),
        ];
        for c in &crits {
            let g = gradient(c, &frf, &d).unwrap();
            let fd = central_difference(c, &frf, &d);
            prop_assert!(rel_err(&g, &fd) < 1e-6, "{:?}: {}", c.kind(), rel_err(&g, &fd));
        }
    }

    #[test]
    fn reductions_hold(frf in frf_strategy(5..12, 2..4), w_seed in any::<u64>()) {
        let n = frf.n_sensors();
        let mut rng = common::rng(w_seed);
        use rand::Rng;
        let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..1.0)).collect();
        let d = Design::with_unit_costs(w.clone(), n as f64).unwrap();
        let classical = evaluate(&Criterion::classical(noise()), &frf, &d).unwrap();

        let pof = Criterion::pof(vec![1.0; n], noise()).unwrap();
        prop_assert!((evaluate(&pof, &frf, &d).unwrap() - classical).abs() < 1e-12);

        let single = ScenarioSet::masks(n, vec![vec![1.0; n]], "all-ones", None).unwrap();
        let avg = Criterion::scenario_avg(single, noise()).unwrap();
        prop_assert!((evaluate(&avg, &frf, &d).unwrap() - classical).abs() < 1e-12);

        // one dead sensor equals deleting its row
        let dead = rng.random_range(0..n);
        let mut s = vec![1.0; n];
        s[dead] = 0.0;
        let mut w_del = w.clone();
        w_del[dead] = 0.0;
        let d_del = Design::with_unit_costs(w_del, n as f64).unwrap();
        if let Ok(expected) = evaluate(&Criterion::classical(noise()), &frf, &d_del) {
            let v = evaluate(&Criterion::pof(s, noise()).unwrap(), &frf, &d).unwrap();
            prop_assert!((v - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn more_weight_never_hurts(frf in frf_strategy(5..12, 2..4), w in weights(12), i in 0usize..12, extra in 0.0f64..0.8) {
        let n = frf.n_sensors();
        let w = w[..n].to_vec();
        let i = i % n;
        let d = Design::with_unit_costs(w.clone(), n as f64).unwrap();
        let mut more = w;
        more[i] = (more[i] + extra).min(1.0);
        let d2 = Design::with_unit_costs(more, n as f64).unwrap();
        let c = Criterion::classical(noise());
        prop_assert!(evaluate(&c, &frf, &d2).unwrap() <= evaluate(&c, &frf, &d).unwrap() + 1e-12);
        // and the gradient is never positive
        let (_, g) = evaluate_with_gradient(&c, &frf, &d).unwrap();
        prop_assert!(g.iter().all(|x| *x <= 0.0));
    }

    #[test]
    fn dropout_inflates_covariance(frf in frf_strategy(6..12, 2..4), w in weights(12), s in proptest::collection::vec(0.3f64..1.0, 12)) {
        let n = frf.n_sensors();
        let d = Design::with_unit_costs(w[..n].to_vec(), n as f64).unwrap();
        let c = covariance(&frf, &d, &noise()).unwrap();
        let cd = dropout_covariance(&frf, &d, &s[..n], &noise()).unwrap();
        let gap = (cd - c).symmetric_eigen().eigenvalues.min();
        prop_assert!(gap >= -1e-10);
    }

    #[test]
    fn wls_is_scale_invariant(frf in frf_strategy(4..10, 2..4), w in weights(10), scale in 0.1f64..0.9, seed in any::<u64>()) {
        let n = frf.n_sensors();
        let mut rng = common::rng(seed);
        use rand::Rng;
        let y = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let d = Design::with_unit_costs(w[..n].to_vec(), n as f64).unwrap();
        let scaled = d.with_weights(w[..n].iter().map(|x| x * scale).collect()).unwrap();
        let a = wls_estimate(&frf, &y, &d, None).unwrap();
        let b = wls_estimate(&frf, &y, &scaled, None).unwrap();
        prop_assert!((a - b).abs().max() < 1e-9);
    }

    #[test]
    fn double_well_vanishes_only_on_binary(w in proptest::collection::vec(0.0f64..1.0, 1..15), flips in proptest::collection::vec(any::<bool>(), 15)) {
        let n = w.len();
        let binary: Vec<f64> = flips[..n].iter().map(|b| if *b { 1.0 } else { 0.0 }).collect();
        let d = Design::with_unit_costs(binary, n as f64).unwrap();
        prop_assert_eq!(double_well(&d), 0.0);
        let d = Design::with_unit_costs(w.clone(), n as f64).unwrap();
        let strictly_inside = w.iter().any(|x| *x > 1e-6 && *x < 1.0 - 1e-6);
        prop_assert_eq!(double_well(&d) > 1e-12, strictly_inside);
    }

    #[test]
    fn rounding_is_binary_feasible_and_within_support(w in proptest::collection::vec(0.0f64..1.0, 1..20), budget in 0.5f64..8.0) {
        let n = w.len();
        let proj = project_feasible(&w, &vec![1.0; n], budget).unwrap();
        let d = Design::with_unit_costs(proj.clone(), budget).unwrap();
        let r = round_design(&d).unwrap();
        prop_assert!(r.is_binary() && r.feasible());
        for (a, b) in r.weights().iter().zip(&proj) {
            prop_assert!(*a == 0.0 || *b > 0.0);
        }
        prop_assert_eq!(round_design(&r).unwrap(), r);
    }

    #[test]
    fn bernoulli_is_deterministic(q in 0.0f64..1.0, n in 1usize..30, seed in any::<u64>()) {
        let pof = PofMap::uniform(n, q).unwrap();
        let a = bernoulli_scenarios(&pof, 50, seed).unwrap();
        let b = bernoulli_scenarios(&pof, 50, seed).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn k_out_sizes_are_binomial(n in 1usize..12, k in 0usize..4) {
        prop_assume!(k <= n);
        let set = k_out_scenarios(n, k).unwrap();
        let expected = robust_oed::scenarios::binomial(n, k) as usize;
        prop_assert_eq!(set.len(), expected);
        for m in set.entries() {
            prop_assert_eq!(m.iter().filter(|v| **v == 0.0).count(), k);
        }
    }
}
