//! Recursive residuals and the historical-sample quantities that normalize
//! every CUSUM detector.
//!
//! For the regression `y_t = x_t'β + u_t` with an intercept in `x_t`, the
//! recursive residual is the standardized one-step-ahead forecast error
//!
//! ```text
//! w_t = (y_t − x_t'β̂_{t−1}) / sqrt(1 + x_t'(Σ_{i<t} x_i x_i')⁻¹ x_t)
//! ```
//!
//! where `β̂_{t−1}` is OLS on observations `1..t−1`. `w_t = 0` for `t ≤ k`
//! and, more generally, for every `t` at which the prior Gram matrix is still
//! singular.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{CusumError, Result};
use crate::linalg::{self, EIGEN_TOL};

/// Observations are re-inverted from scratch after this many rank-one updates.
pub const REFACTOR_INTERVAL: usize = 64;

/// Responses and regressors; the first regressor column is the intercept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    y: Vec<f64>,
    /// Row-major `T × k`.
    x: Vec<f64>,
    k: usize,
}

impl Dataset {
    /// Builds a dataset from responses and a row-major `T × k` design whose
    /// first column must be identically one.
    pub fn new(y: Vec<f64>, x: Vec<f64>, k: usize) -> Result<Self> {
        if y.is_empty() {
            return Err(CusumError::EmptyDataset);
        }
        if k == 0 {
            return Err(CusumError::InvalidConfig("k must be at least 1".into()));
        }
        if x.len() != y.len() * k {
            return Err(CusumError::DimensionMismatch { expected: y.len() * k, got: x.len() });
        }
        for (row, chunk) in x.chunks_exact(k).enumerate() {
            if chunk[0] != 1.0 {
                return Err(CusumError::MissingIntercept { row, value: chunk[0] });
            }
        }
        if let Some(bad) = y.iter().chain(&x).find(|v| !v.is_finite()) {
            return Err(CusumError::Parse(format!("non-finite value {bad}")));
        }
        let t = y.len();
        if t <= k {
            return Err(CusumError::SampleTooSmall { t, k, min: k });
        }
        Ok(Dataset { y, x, k })
    }

    /// Builds a dataset from responses and the non-intercept regressor
    /// columns; the intercept column is prepended.
    pub fn with_intercept(y: Vec<f64>, columns: &[Vec<f64>]) -> Result<Self> {
        let t = y.len();
        for c in columns {
            if c.len() != t {
                return Err(CusumError::DimensionMismatch { expected: t, got: c.len() });
            }
        }
        let k = columns.len() + 1;
        let mut x = Vec::with_capacity(t * k);
        for i in 0..t {
            x.push(1.0);
            x.extend(columns.iter().map(|c| c[i]));
        }
        Dataset::new(y, x, k)
    }

    /// Location model `y_t = β + u_t`.
    pub fn intercept_only(y: Vec<f64>) -> Result<Self> {
        Dataset::with_intercept(y, &[])
    }

    /// Sample size `T`.
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Regressor count `k` (intercept included).
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    /// Regressor row of observation `t` (0-based).
    pub fn row(&self, t: usize) -> &[f64] {
        &self.x[t * self.k..(t + 1) * self.k]
    }

    pub fn rows(&self) -> impl Iterator<Item = (&[f64], f64)> {
        self.x.chunks_exact(self.k).zip(self.y.iter().copied())
    }

    /// The design as an nalgebra matrix.
    pub fn design(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.len(), self.k, &self.x)
    }

    /// Observations `start..end` (0-based, half open) as a new dataset.
    pub fn slice(&self, start: usize, end: usize) -> Result<Dataset> {
        let end = end.min(self.len());
        let start = start.min(end);
        Dataset::new(self.y[start..end].to_vec(), self.x[start * self.k..end * self.k].to_vec(), self.k)
    }

    /// Same regressors with every response passed through `f(t, y_t, x_t)`.
    pub fn map_response<F: Fn(usize, f64, &[f64]) -> f64>(&self, f: F) -> Dataset {
        let y = self.rows().enumerate().map(|(t, (x, y))| f(t, y, x)).collect();
        Dataset { y, x: self.x.clone(), k: self.k }
    }

    /// Observations in reverse time order.
    pub fn reversed(&self) -> Dataset {
        let y = self.y.iter().rev().copied().collect();
        let x = self.x.chunks_exact(self.k).rev().flatten().copied().collect();
        Dataset { y, x, k: self.k }
    }
}

/// Running least-squares state after `t` observations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RlsState {
    k: usize,
    t: usize,
    /// `Σ x_j x_j'`, row-major.
    gram: Vec<f64>,
    /// Inverse of `gram`, meaningful only when `rank_ok`.
    gram_inv: Vec<f64>,
    /// `Σ x_j y_j`.
    xy: Vec<f64>,
    rank_ok: bool,
    since_refactor: usize,
}

impl RlsState {
    pub fn new(k: usize) -> Self {
        RlsState {
            k,
            t: 0,
            gram: vec![0.0; k * k],
            gram_inv: vec![0.0; k * k],
            xy: vec![0.0; k],
            rank_ok: false,
            since_refactor: 0,
        }
    }

    /// Observations consumed so far.
    pub fn t(&self) -> usize {
        self.t
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Whether the Gram matrix of the consumed observations is invertible.
    pub fn rank_ok(&self) -> bool {
        self.rank_ok
    }

    /// `Σ x_j x_j'` over consumed observations (row-major).
    pub fn gram(&self) -> &[f64] {
        &self.gram
    }

    /// Current OLS coefficients, if identified.
    pub fn beta(&self) -> Option<Vec<f64>> {
        self.rank_ok.then(|| {
            let mut b = vec![0.0; self.k];
            linalg::mat_vec(&self.gram_inv, &self.xy, &mut b);
            b
        })
    }

    /// Re-inverts the Gram matrix from scratch, discarding rank-one drift.
    pub fn refactorize(&mut self) {
        if let Some(inv) = linalg::spd_inverse(&self.gram, self.k) {
            self.gram_inv = inv;
            self.rank_ok = true;
        } else {
            self.rank_ok = false;
        }
        self.since_refactor = 0;
    }

    /// Consumes `(x, y)` and returns its recursive residual.
    pub fn step(&mut self, x: &[f64], y: f64) -> Result<f64> {
        let k = self.k;
        if x.len() != k {
            return Err(CusumError::DimensionMismatch { expected: k, got: x.len() });
        }
        // k ≤ 8 in every realistic use; stack buffers keep the hot loop allocation-free
        let mut mx_buf = [0.0; 16];
        let mut heap;
        let mx: &mut [f64] = if k <= 16 {
            &mut mx_buf[..k]
        } else {
            heap = vec![0.0; k];
            &mut heap
        };

        let mut f = 1.0;
        let w = if self.rank_ok {
            linalg::mat_vec(&self.gram_inv, x, mx);
            f = 1.0 + linalg::dot(x, mx);
            // x'β̂ = x' G⁻¹ v = (G⁻¹x)'v
            let pred = linalg::dot(mx, &self.xy);
            (y - pred) / f.sqrt()
        } else {
            0.0
        };

        for i in 0..k {
            self.xy[i] += x[i] * y;
            for j in 0..k {
                self.gram[i * k + j] += x[i] * x[j];
            }
        }
        self.t += 1;

        if self.rank_ok {
            for i in 0..k {
                for j in 0..k {
                    self.gram_inv[i * k + j] -= mx[i] * mx[j] / f;
                }
            }
            self.since_refactor += 1;
            if self.since_refactor >= REFACTOR_INTERVAL {
                self.refactorize();
            }
        } else if self.t >= k {
            self.refactorize();
        }
        Ok(w)
    }
}

/// Functional form of [`RlsState::step`].
pub fn recursive_residual_step(mut state: RlsState, x: &[f64], y: f64) -> Result<(RlsState, f64)> {
    let w = state.step(x, y)?;
    Ok((state, w))
}

/// Recursive residuals of a whole dataset plus the state after the last
/// observation.
pub fn recursive_residuals(data: &Dataset) -> (Vec<f64>, RlsState) {
    let mut rls = RlsState::new(data.k());
    let w = data
        .rows()
        .map(|(x, y)| rls.step(x, y).expect("row width matches k"))
        .collect();
    (w, rls)
}

/// Everything the CUSUM normalization needs from the historical sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryFit {
    /// Recursive residuals `w_1..w_T`.
    pub w: Vec<f64>,
    /// Residual standard deviation estimate `σ̂`.
    pub sigma_hat: f64,
    /// Second-moment matrix `C_T = T⁻¹ Σ x_t x_t'`.
    pub c: DMatrix<f64>,
    /// Symmetric `C_T^{-1/2}`.
    pub c_inv_sqrt: DMatrix<f64>,
    /// 1-based index of the first residual computed from an identified fit.
    pub first_valid: usize,
    /// Row-major `T × k` products `x_t w_t`.
    pub xw: Vec<f64>,
    /// Least-squares state after observation `T`.
    pub rls: RlsState,
}

impl HistoryFit {
    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    pub fn k(&self) -> usize {
        self.c.nrows()
    }

    /// `x_t w_t` for 0-based `t`.
    pub fn xw_row(&self, t: usize) -> &[f64] {
        let k = self.k();
        &self.xw[t * k..(t + 1) * k]
    }
}

/// `σ̂² = (T−k−1)⁻¹ Σ_{j=1}^T (w_j − w̄)²`, `w̄` averaging all `T` entries.
pub fn residual_variance(w: &[f64], k: usize) -> f64 {
    let t = w.len();
    let mean = w.iter().sum::<f64>() / t as f64;
    w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (t - k - 1) as f64
}

/// Fits the historical sample.
pub fn fit_history(data: &Dataset) -> Result<HistoryFit> {
    let (t_len, k) = (data.len(), data.k());
    if t_len <= k + 1 {
        return Err(CusumError::SampleTooSmall { t: t_len, k, min: k + 1 });
    }
    let mut rls = RlsState::new(k);
    let mut w = Vec::with_capacity(t_len);
    let mut first_valid = None;
    for (t, (x, y)) in data.rows().enumerate() {
        if first_valid.is_none() && rls.rank_ok() {
            first_valid = Some(t + 1);
        }
        w.push(rls.step(x, y)?);
    }
    if !rls.rank_ok() {
        return Err(CusumError::RankDeficient);
    }
    let first_valid = first_valid.unwrap_or(t_len + 1);

    let sigma2 = residual_variance(&w, k);
    let rms_y = (data.y().iter().map(|v| v * v).sum::<f64>() / t_len as f64).sqrt();
    if !(sigma2 > 0.0) || sigma2.sqrt() <= 1e-10 * rms_y {
        return Err(CusumError::DegenerateVariance);
    }

    let c = DMatrix::from_row_slice(k, k, rls.gram()) / t_len as f64;
    let c_inv_sqrt = linalg::inverse_sqrt_symmetric(&c, EIGEN_TOL)?;

    let mut xw = Vec::with_capacity(t_len * k);
    for ((x, _), wt) in data.rows().zip(&w) {
        xw.extend(x.iter().map(|v| v * wt));
    }

    Ok(HistoryFit { w, sigma_hat: sigma2.sqrt(), c, c_inv_sqrt, first_valid, xw, rls })
}
