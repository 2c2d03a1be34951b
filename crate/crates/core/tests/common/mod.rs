//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use cusum::{fit_history, Dataset};
use nalgebra::{DMatrix, DVector, SymmetricEigen};

pub fn design_rows(data: &Dataset, n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, data.k(), |i, j| data.row(i)[j])
}

/// `w_t` by a from-scratch least-squares solve on rows `1..t−1`.
pub fn naive_residuals(data: &Dataset) -> Vec<f64> {
    let k = data.k();
    (0..data.len())
        .map(|t| {
            if t < k {
                return 0.0;
            }
            let x = design_rows(data, t);
            let y = DVector::from_column_slice(&data.y()[..t]);
            let Some(chol) = (x.transpose() * &x).cholesky() else { return 0.0 };
            let beta = chol.solve(&(x.transpose() * y));
            let xt = DVector::from_column_slice(data.row(t));
            let f = 1.0 + (xt.transpose() * chol.inverse() * &xt)[(0, 0)];
            (data.y()[t] - xt.dot(&beta)) / f.sqrt()
        })
        .collect()
}

/// Normalization `(σ̂√T)⁻¹ C_T^{-1/2}` computed independently of the crate.
pub fn naive_standardizer(data: &Dataset, w: &[f64]) -> DMatrix<f64> {
    let (t, k) = (data.len(), data.k());
    let mean = w.iter().sum::<f64>() / t as f64;
    let sigma = (w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (t - k - 1) as f64).sqrt();
    let x = design_rows(data, t);
    let eig = SymmetricEigen::new(x.transpose() * &x / t as f64);
    let root = &eig.eigenvectors * DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt())) * eig.eigenvectors.transpose();
    root / (sigma * (t as f64).sqrt())
}

pub fn max_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

pub fn well_posed(data: &Dataset) -> bool {
    fit_history(data).is_ok_and(|f| {
        let eig = SymmetricEigen::new(f.c.clone());
        let (lo, hi) = eig.eigenvalues.iter().fold((f64::INFINITY, 0.0_f64), |(lo, hi), &l| (lo.min(l), hi.max(l)));
        lo > 1e-3 * hi
    })
}

/// Brute-force monitoring statistics for `t = T+1..=N` with the history's
/// normalization frozen and residuals from fresh least-squares solves.
pub fn offline_monitor(data: &Dataset, t_hist: usize, stacked: bool) -> Vec<f64> {
    let hist = data.slice(0, t_hist).unwrap();
    let w = naive_residuals(data);
    let scale = naive_standardizer(&hist, &w[..t_hist]);
    let d = |span: usize| 1.0 + 2.0 * span as f64 / t_hist as f64;
    let mut z = vec![DVector::zeros(data.k())];
    let mut acc = DVector::zeros(data.k());
    let mut out = Vec::new();
    for t in t_hist..data.len() {
        acc += DVector::from_column_slice(data.row(t)) * w[t];
        z.push(&scale * &acc);
        let row = z.len() - 1;
        out.push(if stacked {
            (0..row).map(|a| max_norm(&(&z[row] - &z[a])) / d(row - a)).fold(0.0, f64::max)
        } else {
            max_norm(&z[row]) / d(row)
        });
    }
    out
}
