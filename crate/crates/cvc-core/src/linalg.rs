//! Dense helpers shared by the predictor and likelihood code.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative eigenvalue floor used when checking positive semidefiniteness.
pub const PSD_TOLERANCE: f64 = 1e-8;

/// Relative pivot floor for detecting a rank-deficient normal matrix.
const RANK_TOLERANCE: f64 = 1e-12;

/// Cholesky factor of a symmetric positive definite matrix.
///
/// On failure a single jitter of `1e-10 * mean(diag)` is added and the
/// factorization retried once.
pub fn spd_factor(a: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    if let Some(c) = Cholesky::new(a.clone()) {
        return Ok(c);
    }
    let n = a.nrows();
    if n == 0 {
        return Err(Error::NotPositiveDefinite);
    }
    let jitter = 1e-10 * a.diagonal().sum() / n as f64;
    if !(jitter > 0.0) {
        return Err(Error::NotPositiveDefinite);
    }
    let mut b = a.clone();
    for i in 0..n {
        b[(i, i)] += jitter;
    }
    Cholesky::new(b).ok_or(Error::NotPositiveDefinite)
}

pub fn spd_inverse(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Ok(spd_factor(a)?.inverse())
}

/// Factor a normal-equations matrix, rejecting numerically singular ones.
pub fn normal_factor(a: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    let p = a.nrows();
    let scale = (0..p).map(|i| a[(i, i)].abs()).fold(0.0, f64::max);
    if p == 0 || !(scale > 0.0) {
        return Err(Error::RankDeficient);
    }
    let chol = Cholesky::new(a.clone()).ok_or(Error::RankDeficient)?;
    let l = chol.l_dirty();
    let min_pivot = (0..p).map(|i| l[(i, i)] * l[(i, i)]).fold(f64::INFINITY, f64::min);
    if min_pivot <= RANK_TOLERANCE * scale {
        return Err(Error::RankDeficient);
    }
    Ok(chol)
}

pub fn log_det(chol: &Cholesky<f64, Dyn>) -> f64 {
    let l = chol.l_dirty();
    2.0 * (0..l.nrows()).map(|i| libm::log(l[(i, i)])).sum::<f64>()
}

/// Verify that `a` is positive semidefinite up to `PSD_TOLERANCE` relative to
/// its spectral radius.
pub fn check_psd(a: &DMatrix<f64>) -> Result<()> {
    if a.nrows() == 0 {
        return Ok(());
    }
    let eig = SymmetricEigen::new(a.clone());
    let max = eig.eigenvalues.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if min < -PSD_TOLERANCE * max {
        return Err(Error::NotPositiveSemidefinite {
            min_eigenvalue: min,
            max_eigenvalue: max,
        });
    }
    Ok(())
}

/// A square root `R` with `R Rᵀ = a` for a symmetric PSD matrix, via the
/// eigendecomposition with negative round-off eigenvalues clamped to zero.
pub fn psd_sqrt(a: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(a.clone());
    let mut r = eig.eigenvectors;
    for (j, &lambda) in eig.eigenvalues.iter().enumerate() {
        let s = libm::sqrt(lambda.max(0.0));
        r.column_mut(j).scale_mut(s);
    }
    r
}

pub fn select_rows(m: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), m.ncols(), |i, j| m[(rows[i], j)])
}

pub fn select_entries(v: &DVector<f64>, rows: &[usize]) -> DVector<f64> {
    DVector::from_fn(rows.len(), |i, _| v[rows[i]])
}

pub fn select_block(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

pub fn trace_product(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    // tr(AB) = sum_ij A_ij B_ji
    let n = a.nrows();
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..a.ncols() {
            acc += a[(i, j)] * b[(j, i)];
        }
    }
    acc
}
