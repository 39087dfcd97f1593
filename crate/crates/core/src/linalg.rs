//! Small dense helpers shared by the estimation, criterion and sampling code.
//!
//! Information matrices here are always `n_theta x n_theta` with `n_theta`
//! in the single digits, so everything is plain dense `nalgebra`.

use nalgebra::{DMatrix, DVector};

use crate::error::{OedError, Result};

/// Relative singular-value cutoff below which a direction counts as lost.
pub const DEFAULT_RANK_EPS: f64 = 1e-10;

/// Numerical rank of a symmetric positive-semidefinite matrix: eigenvalues
/// above `eps * largest` are counted.
pub fn sym_numerical_rank(m: &DMatrix<f64>, eps: f64) -> usize {
    if m.nrows() == 0 {
        return 0;
    }
    let eig = m.clone().symmetric_eigenvalues();
    let largest = eig.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
    if largest == 0.0 || !largest.is_finite() {
        return 0;
    }
    eig.iter().filter(|v| v.abs() > eps * largest).count()
}

/// Numerical rank of a general matrix from its singular values.
pub fn numerical_rank(m: &DMatrix<f64>, eps: f64) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let sv = m.clone().singular_values();
    let largest = sv.max();
    if largest == 0.0 || !largest.is_finite() {
        return 0;
    }
    sv.iter().filter(|s| **s > eps * largest).count()
}

/// `sum_i coeffs[i] * t_i t_i^T` over the rows of `t`, skipping zero
/// coefficients so sparse designs cost only their support.
pub fn information_matrix(t: &DMatrix<f64>, coeffs: &[f64]) -> DMatrix<f64> {
    debug_assert_eq!(t.nrows(), coeffs.len());
    let p = t.ncols();
    let mut m = DMatrix::zeros(p, p);
    for (i, &c) in coeffs.iter().enumerate() {
        if c == 0.0 {
            continue;
        }
        add_rank_one(&mut m, t, i, c);
    }
    symmetrize_upper(&mut m);
    m
}

/// Adds `c * t_i t_i^T` to the upper triangle of `m`.
pub(crate) fn add_rank_one(m: &mut DMatrix<f64>, t: &DMatrix<f64>, row: usize, c: f64) {
    let p = t.ncols();
    for b in 0..p {
        let cb = c * t[(row, b)];
        if cb == 0.0 {
            continue;
        }
        for a in 0..=b {
            m[(a, b)] += cb * t[(row, a)];
        }
    }
}

pub(crate) fn symmetrize_upper(m: &mut DMatrix<f64>) {
    let p = m.nrows();
    for b in 0..p {
        for a in (b + 1)..p {
            m[(a, b)] = m[(b, a)];
        }
    }
}

/// `t_i^T a t_i` for one row.
pub fn row_quadratic_form(t: &DMatrix<f64>, row: usize, a: &DMatrix<f64>) -> f64 {
    let p = t.ncols();
    let mut acc = 0.0;
    for c in 0..p {
        let tc = t[(row, c)];
        if tc == 0.0 {
            continue;
        }
        let mut inner = 0.0;
        for r in 0..p {
            inner += a[(r, c)] * t[(row, r)];
        }
        acc += tc * inner;
    }
    acc
}

/// Cholesky-based factorization of an information matrix with the rank test
/// applied up front. Carries the inverse because every caller needs it.
#[derive(Debug, Clone)]
pub struct InfoFactor {
    logdet: f64,
    inverse: DMatrix<f64>,
}

impl InfoFactor {
    pub fn new(m: DMatrix<f64>, eps: f64) -> Result<Self> {
        let p = m.nrows();
        let trace = m.trace();
        let Some(chol) = m.clone().cholesky() else {
            return Err(OedError::ill_posed(sym_numerical_rank(&m, eps), p));
        };
        let logdet = 2.0
            * chol
                .l_dirty()
                .diagonal()
                .iter()
                .map(|d| d.ln())
                .sum::<f64>();
        let inverse = chol.inverse();
        // kappa <= tr(M) tr(M^-1); only pay for eigenvalues when the cheap
        // bound cannot clear the matrix.
        if !(trace * inverse.trace() < 1.0 / eps) || !logdet.is_finite() {
            let rank = sym_numerical_rank(&m, eps);
            if rank < p {
                return Err(OedError::ill_posed(rank, p));
            }
        }
        Ok(Self { logdet, inverse })
    }

    pub fn logdet(&self) -> f64 {
        self.logdet
    }

    pub fn inverse(&self) -> &DMatrix<f64> {
        &self.inverse
    }

    pub fn into_inverse(self) -> DMatrix<f64> {
        self.inverse
    }

    pub fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        &self.inverse * rhs
    }
}

/// Symmetric square root `L` with `L L^T = cov` for sampling; tolerates
/// semidefinite input, rejects clearly negative eigenvalues.
pub fn psd_sqrt(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = cov.nrows();
    if cov.ncols() != n {
        return Err(OedError::InvalidConfig("covariance must be square".into()));
    }
    let asym = (cov - cov.transpose()).abs().max();
    let scale = cov.abs().max().max(f64::MIN_POSITIVE);
    if asym > 1e-10 * scale {
        return Err(OedError::InvalidConfig(
            "covariance must be symmetric".into(),
        ));
    }
    let eig = cov.clone().symmetric_eigen();
    let mut root = eig.eigenvectors.clone();
    for (k, &lam) in eig.eigenvalues.iter().enumerate() {
        if lam < -1e-10 * scale {
            return Err(OedError::InvalidConfig(format!(
                "covariance is not positive-semidefinite (eigenvalue {lam:e})"
            )));
        }
        let s = lam.max(0.0).sqrt();
        root.column_mut(k).scale_mut(s);
    }
    Ok(root)
}
