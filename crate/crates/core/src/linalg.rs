//! Small dense helpers for k×k problems (k is the regressor count, rarely
//! more than a handful). Matrices are flat row-major slices.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{CusumError, Result};

/// Default relative eigenvalue floor for [`inverse_sqrt_symmetric`].
pub const EIGEN_TOL: f64 = 1e-12;

/// Relative pivot floor below which a Gram matrix is treated as singular.
pub(crate) const PIVOT_TOL: f64 = 1e-10;

/// `out = a * x` for a k×k row-major `a`.
#[inline]
pub(crate) fn mat_vec(a: &[f64], x: &[f64], out: &mut [f64]) {
    let k = x.len();
    for (i, o) in out.iter_mut().enumerate().take(k) {
        let row = &a[i * k..(i + 1) * k];
        *o = row.iter().zip(x).map(|(r, v)| r * v).sum();
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Inverse of a symmetric positive-definite matrix via Cholesky.
///
/// Returns `None` when a pivot falls below `PIVOT_TOL` times the largest
/// diagonal entry.
pub(crate) fn spd_inverse(a: &[f64], k: usize) -> Option<Vec<f64>> {
    let scale = (0..k).map(|i| a[i * k + i]).fold(0.0_f64, f64::max);
    if scale <= 0.0 || !scale.is_finite() {
        return None;
    }
    // lower-triangular factor
    let mut l = vec![0.0; k * k];
    for j in 0..k {
        let mut d = a[j * k + j];
        for p in 0..j {
            d -= l[j * k + p] * l[j * k + p];
        }
        if d <= PIVOT_TOL * scale {
            return None;
        }
        let d = d.sqrt();
        l[j * k + j] = d;
        for i in j + 1..k {
            let mut s = a[i * k + j];
            for p in 0..j {
                s -= l[i * k + p] * l[j * k + p];
            }
            l[i * k + j] = s / d;
        }
    }
    // invert L, then A^{-1} = L^{-T} L^{-1}
    let mut li = vec![0.0; k * k];
    for i in 0..k {
        li[i * k + i] = 1.0 / l[i * k + i];
        for j in 0..i {
            let mut s = 0.0;
            for p in j..i {
                s -= l[i * k + p] * li[p * k + j];
            }
            li[i * k + j] = s / l[i * k + i];
        }
    }
    let mut inv = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..=i {
            let s: f64 = (i..k).map(|p| li[p * k + i] * li[p * k + j]).sum();
            inv[i * k + j] = s;
            inv[j * k + i] = s;
        }
    }
    Some(inv)
}

/// Symmetric inverse square root `V Λ^{-1/2} V'` of a symmetric positive
/// definite matrix.
///
/// Fails with [`CusumError::NotSymmetric`] when `a` is asymmetric beyond
/// `tol` (relative to its largest entry) and with
/// [`CusumError::IllConditioned`] when an eigenvalue is at most
/// `tol · λ_max`.
pub fn inverse_sqrt_symmetric(a: &DMatrix<f64>, tol: f64) -> Result<DMatrix<f64>> {
    let k = a.nrows();
    if a.ncols() != k {
        return Err(CusumError::DimensionMismatch { expected: k, got: a.ncols() });
    }
    if k == 0 {
        return Err(CusumError::EmptyDataset);
    }
    let amax = a.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let asym = (0..k)
        .flat_map(|i| (0..k).map(move |j| (i, j)))
        .map(|(i, j)| (a[(i, j)] - a[(j, i)]).abs())
        .fold(0.0_f64, f64::max);
    if asym > tol * amax.max(f64::MIN_POSITIVE) {
        return Err(CusumError::NotSymmetric { asymmetry: asym });
    }
    let eig = SymmetricEigen::new(a.clone());
    let lmax = eig.eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lmin = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if lmax <= 0.0 || lmin <= tol * lmax {
        return Err(CusumError::IllConditioned { eigenvalue: lmin });
    }
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt()));
    let b = &eig.eigenvectors * d * eig.eigenvectors.transpose();
    Ok((&b + b.transpose()) * 0.5)
}
