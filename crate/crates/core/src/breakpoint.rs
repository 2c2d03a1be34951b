//! Break-date estimation.
//!
//! The backward estimator maximizes the scaled backward CUSUM
//! `BS_t = (T − t + 1)^{-1/2} C^{-1/2} Σ_{j=t}^T x_j w_j`, so its `t̂` is the
//! first observation of the new regime. The likelihood estimator minimizes
//! `S₁(t) + S₂(t)`, the residual sums of squares of OLS fits on `1..t` and
//! `t+1..T`, so its `t̂` is the last observation of the old regime.

use serde::{Deserialize, Serialize};

use crate::error::{CusumError, Result};
use crate::regression::{fit_history, Dataset, HistoryFit, RlsState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BreakMethod {
    Ml,
    Bq,
}

/// Where to search for the break.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "type")]
pub enum BreakContext {
    /// Anywhere in `1..=T`.
    Retrospective,
    /// After a detection at `t_detect` during monitoring of a history of
    /// length `t_hist`; the search covers `t_hist < t ≤ t_detect`.
    Monitoring { t_hist: usize, t_detect: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BreakEstimate {
    pub method: BreakMethod,
    /// 1-based break index: first post-break observation for
    /// [`BreakMethod::Bq`], last pre-break observation for [`BreakMethod::Ml`].
    pub t_hat: usize,
    /// `t̂/T`, with `T` the historical length in monitoring.
    pub tau_hat: f64,
    /// `t̂/T_d` in monitoring.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_hat_detect: Option<f64>,
    pub context: BreakContext,
}

impl BreakEstimate {
    fn new(method: BreakMethod, t_hat: usize, len: usize, context: BreakContext) -> Self {
        let (tau_hat, tau_hat_detect) = match context {
            BreakContext::Retrospective => (t_hat as f64 / len as f64, None),
            BreakContext::Monitoring { t_hist, t_detect } => {
                (t_hat as f64 / t_hist as f64, Some(t_hat as f64 / t_detect as f64))
            }
        };
        BreakEstimate { method, t_hat, tau_hat, tau_hat_detect, context }
    }
}

/// `BS_t` for `t = 1..=T`, row-major `T × k`.
pub fn scaled_backward_path(fit: &HistoryFit) -> Vec<f64> {
    let (t_len, k) = (fit.len(), fit.k());
    let a = fit.c_inv_sqrt.transpose();
    let a = a.as_slice();
    let mut out = vec![0.0; t_len * k];
    let mut sum = vec![0.0; k];
    for t in (0..t_len).rev() {
        for (s, v) in sum.iter_mut().zip(fit.xw_row(t)) {
            *s += v;
        }
        let scale = 1.0 / ((t_len - t) as f64).sqrt();
        let row = &mut out[t * k..(t + 1) * k];
        crate::linalg::mat_vec(a, &sum, row);
        row.iter_mut().for_each(|v| *v *= scale);
    }
    out
}

fn search_range(context: BreakContext, len: usize) -> Result<(usize, usize)> {
    match context {
        BreakContext::Retrospective => Ok((1, len)),
        BreakContext::Monitoring { t_hist, t_detect } => {
            if t_detect != len || t_hist >= t_detect {
                return Err(CusumError::EmptyRange(format!(
                    "monitoring search needs T < T_d = sample length, got T = {t_hist}, T_d = {t_detect}, length {len}"
                )));
            }
            Ok((t_hist + 1, t_detect))
        }
    }
}

/// `argmax ‖BS_t‖_max` over the admissible range, smallest index on ties.
///
/// In monitoring, `fit` must cover `1..=T_d`.
pub fn estimate_break_bq(fit: &HistoryFit, context: BreakContext) -> Result<BreakEstimate> {
    let (lo, hi) = search_range(context, fit.len())?;
    let k = fit.k();
    let bs = scaled_backward_path(fit);
    let mut best = (lo, f64::NEG_INFINITY);
    for t in lo..=hi {
        let v = bs[(t - 1) * k..t * k].iter().fold(0.0_f64, |m, x| m.max(x.abs()));
        if v > best.1 {
            best = (t, v);
        }
    }
    Ok(BreakEstimate::new(BreakMethod::Bq, best.0, fit.len(), context))
}

/// Convenience wrapper fitting `data` first.
pub fn estimate_break_bq_data(data: &Dataset, context: BreakContext) -> Result<BreakEstimate> {
    estimate_break_bq(&fit_history(data)?, context)
}

/// Residual sums of squares of OLS fits on `1..=n`, `n = 0..=T`.
///
/// Entry `n` is `None` while the first `n` rows do not have full rank.
pub fn prefix_rss(data: &Dataset) -> Vec<Option<f64>> {
    let mut out = vec![None; data.len() + 1];
    let mut state = RlsState::new(data.k());
    let mut rss: Option<f64> = None;
    for (t, (x, y)) in data.rows().enumerate() {
        let was_ok = state.rank_ok();
        let w = state.step(x, y).expect("row length matches k");
        rss = match (was_ok, state.rank_ok()) {
            (true, _) => rss.map(|s| s + w * w),
            (false, true) => {
                let beta = state.beta().expect("full rank");
                Some(
                    data.rows()
                        .take(t + 1)
                        .map(|(xr, yr)| {
                            let e = yr - xr.iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>();
                            e * e
                        })
                        .sum(),
                )
            }
            (false, false) => None,
        };
        out[t + 1] = rss;
    }
    out
}

/// Residual sums of squares of OLS fits on `n+1..=T`, `n = 0..=T`.
pub fn suffix_rss(data: &Dataset) -> Vec<Option<f64>> {
    let mut rev = prefix_rss(&data.reversed());
    rev.reverse();
    rev
}

/// `argmin (S₁(t) + S₂(t))` over splits leaving at least `k + 1` observations
/// on each side, smallest index on ties.
pub fn estimate_break_ml(data: &Dataset, context: BreakContext) -> Result<BreakEstimate> {
    let (t_len, k) = (data.len(), data.k());
    let (lo, hi) = search_range(context, t_len)?;
    let lo = lo.max(k + 1);
    let hi = hi.min(t_len.saturating_sub(k + 1));
    if lo > hi {
        return Err(CusumError::SampleTooSmall { t: t_len, k, min: 2 * k + 2 });
    }
    let pre = prefix_rss(data);
    let post = suffix_rss(data);
    let mut best: Option<(usize, f64)> = None;
    for t in lo..=hi {
        if let (Some(s1), Some(s2)) = (pre[t], post[t]) {
            let s = s1 + s2;
            if best.is_none_or(|b| s < b.1) {
                best = Some((t, s));
            }
        }
    }
    let (t_hat, _) = best.ok_or(CusumError::RankDeficient)?;
    Ok(BreakEstimate::new(BreakMethod::Ml, t_hat, t_len, context))
}
