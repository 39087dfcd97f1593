#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use robust_oed::structural::FrfMatrix;

pub fn oracles() -> Value {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/oracles.json");
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

pub fn vec_f64(v: &Value) -> Vec<f64> {
    v.as_array()
        .unwrap()
        .iter()
        .map(|x| x.as_f64().unwrap())
        .collect()
}

pub fn frf_from(v: &Value) -> FrfMatrix {
    let rows: Vec<Vec<f64>> = v.as_array().unwrap().iter().map(vec_f64).collect();
    let (n, p) = (rows.len(), rows[0].len());
    FrfMatrix::from_matrix(DMatrix::from_fn(n, p, |i, j| rows[i][j])).unwrap()
}

pub fn random_frf(rng: &mut ChaCha8Rng, n: usize, p: usize) -> FrfMatrix {
    let m = DMatrix::from_fn(n, p, |_, _| rng.random_range(-1.0..1.0));
    FrfMatrix::from_matrix(m).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
