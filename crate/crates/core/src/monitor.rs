//! Online monitoring for `t > T`.
//!
//! The historical sample fixes `σ̂` and `C_T^{-1/2}`; the least-squares fit
//! keeps updating so that every new `w_t` is a genuine recursive residual.
//! With `S_t = Σ_{j≤t} x_j w_j` the standardized monitoring path is
//!
//! ```text
//! Z_t = (σ̂√T)⁻¹ H' C_T^{-1/2} (S_t − S_T),
//! ```
//!
//! the forward detector compares `‖Z_t‖` with `λ d((t − T)/T)` and the stacked
//! detector compares `‖Z_t − Z_{s−1}‖` with `λ d((t − s + 1)/T)` for every
//! `T < s ≤ t`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::detectors::{check_orthonormal, Boundary, DetectorConfig, DetectorKind, Horizon};
use crate::error::{CusumError, Result};
use crate::regression::{fit_history, Dataset, RlsState};

/// Version of the serialized [`MonitorState`] layout.
pub const MONITOR_SCHEMA_VERSION: u32 = 1;

/// Suspendable monitoring session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorState {
    schema_version: u32,
    kind: DetectorKind,
    boundary: Boundary,
    horizon: Horizon,
    t_hist: usize,
    k: usize,
    sigma_hat: f64,
    c_inv_sqrt: DMatrix<f64>,
    projection: Option<DMatrix<f64>>,
    rls: RlsState,
    /// Raw `S_t`, row-major. Stacked sessions keep `t = T..=t_now`; forward
    /// sessions keep `S_T` and the latest `S_t`.
    cum: Vec<f64>,
    t_now: usize,
    stopped_at: Option<usize>,
    running_max: f64,
    capacity: Option<usize>,
    /// `ν × k` row-major `(σ̂√T)⁻¹ H' C^{-1/2}`.
    #[serde(skip)]
    proj: Vec<f64>,
    /// `Z_t` for the rows of `cum`.
    #[serde(skip)]
    z: Vec<f64>,
}

/// Outcome of one monitoring step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonitorStatus {
    pub t: usize,
    /// `‖Q^mon_t‖` (forward) or `‖SBQ_{s*,t}‖` at the maximizing `s*` (stacked).
    pub detector_value: f64,
    /// Boundary matched with `detector_value`.
    pub boundary_at_t: f64,
    /// `detector_value / d(·)`, compared with `λ`.
    pub statistic: f64,
    /// Maximizing window start `s*` (stacked only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window_start: Option<usize>,
    pub crossed: bool,
    pub stopping_time: Option<usize>,
}

/// Result of [`monitor_run`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorReport {
    pub detector: DetectorKind,
    pub lambda: f64,
    pub t_hist: usize,
    pub last_t: usize,
    pub stopping_time: Option<usize>,
    /// `T_d − T*` when a true break `T*` was declared and detected.
    pub delay: Option<i64>,
    pub running_max: f64,
    /// Whether the finite horizon was reached.
    pub horizon_reached: bool,
    pub trace: Vec<MonitorStatus>,
}

fn standardizer(sigma_hat: f64, t_hist: usize, c_inv_sqrt: &DMatrix<f64>, h: Option<&DMatrix<f64>>) -> Vec<f64> {
    let scale = 1.0 / (sigma_hat * (t_hist as f64).sqrt());
    let m = match h {
        Some(h) => h.transpose() * c_inv_sqrt,
        None => c_inv_sqrt.clone(),
    };
    let (nu, k) = m.shape();
    let mut out = Vec::with_capacity(nu * k);
    for i in 0..nu {
        for j in 0..k {
            out.push(m[(i, j)] * scale);
        }
    }
    out
}

impl MonitorState {
    pub fn kind(&self) -> DetectorKind {
        self.kind
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    pub fn lambda(&self) -> f64 {
        self.boundary.lambda
    }

    pub fn horizon(&self) -> Horizon {
        self.horizon
    }

    /// Historical sample length `T`.
    pub fn t_hist(&self) -> usize {
        self.t_hist
    }

    /// Index of the last consumed observation.
    pub fn t_now(&self) -> usize {
        self.t_now
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn nu(&self) -> usize {
        self.projection.as_ref().map_or(self.k, |h| h.ncols())
    }

    pub fn sigma_hat(&self) -> f64 {
        self.sigma_hat
    }

    pub fn stopped_at(&self) -> Option<usize> {
        self.stopped_at
    }

    pub fn running_max(&self) -> f64 {
        self.running_max
    }

    /// Last admissible `t`, if the horizon is finite.
    pub fn endpoint(&self) -> Option<usize> {
        match self.horizon {
            Horizon::Finite(_) => self.horizon.endpoint(self.t_hist),
            _ => None,
        }
    }

    /// Caps the number of retained cumulative sums; stepping past it errors.
    pub fn with_capacity(mut self, cap: usize) -> Self {
        self.capacity = Some(cap);
        self
    }

    /// Standardized path rows `Z_t` currently retained.
    pub fn standardized_path(&self) -> &[f64] {
        &self.z
    }

    fn z_of(&self, row: usize) -> Vec<f64> {
        let k = self.k;
        let s_t = &self.cum[row * k..(row + 1) * k];
        let s_h = &self.cum[..k];
        let diff: Vec<f64> = s_t.iter().zip(s_h).map(|(a, b)| a - b).collect();
        self.proj.chunks_exact(k).map(|r| r.iter().zip(&diff).map(|(a, b)| a * b).sum()).collect()
    }

    fn rebuild(&mut self) {
        self.proj = standardizer(self.sigma_hat, self.t_hist, &self.c_inv_sqrt, self.projection.as_ref());
        let rows = self.cum.len() / self.k;
        self.z = (0..rows).flat_map(|r| self.z_of(r)).collect();
    }

    /// Serializes the full session to JSON.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Restores a session written by [`MonitorState::to_json`].
    pub fn from_json(s: &str) -> Result<Self> {
        let mut st: MonitorState = serde_json::from_str(s)?;
        if st.schema_version != MONITOR_SCHEMA_VERSION {
            return Err(CusumError::SchemaVersion { found: st.schema_version, expected: MONITOR_SCHEMA_VERSION });
        }
        if st.k == 0 || st.cum.len() % st.k != 0 || st.cum.is_empty() {
            return Err(CusumError::Parse("inconsistent cumulative sums".into()));
        }
        if let Some(h) = &st.projection {
            check_orthonormal(h, st.k)?;
        }
        st.rebuild();
        Ok(st)
    }
}

/// Fits the history and freezes its normalization.
pub fn monitor_init(historical: &Dataset, cfg: &DetectorConfig) -> Result<MonitorState> {
    if cfg.horizon == Horizon::Retrospective {
        return Err(CusumError::InvalidConfig("monitoring needs a finite or infinite horizon".into()));
    }
    let k = historical.k();
    let boundary = cfg.boundary(k)?;
    let fit = fit_history(historical)?;
    let mut rls = fit.rls.clone();
    rls.refactorize();
    let mut s_t = vec![0.0; k];
    for t in 0..fit.len() {
        for (s, v) in s_t.iter_mut().zip(fit.xw_row(t)) {
            *s += v;
        }
    }
    let mut st = MonitorState {
        schema_version: MONITOR_SCHEMA_VERSION,
        kind: cfg.kind,
        boundary,
        horizon: cfg.horizon,
        t_hist: fit.len(),
        k,
        sigma_hat: fit.sigma_hat,
        c_inv_sqrt: fit.c_inv_sqrt.clone(),
        projection: cfg.projection.clone(),
        rls,
        cum: s_t,
        t_now: fit.len(),
        stopped_at: None,
        running_max: 0.0,
        capacity: None,
        proj: Vec::new(),
        z: Vec::new(),
    };
    st.rebuild();
    Ok(st)
}

#[inline]
fn diff_norm(z: &[f64], nu: usize, b: usize, a: usize) -> f64 {
    (0..nu).map(|c| (z[b * nu + c] - z[a * nu + c]).abs()).fold(0.0, f64::max)
}

/// Consumes observation `t_now + 1`.
pub fn monitor_step(state: &mut MonitorState, x: &[f64], y: f64) -> Result<MonitorStatus> {
    let t = state.t_now + 1;
    if let Some(end) = state.endpoint() {
        if t > end {
            return Err(CusumError::HorizonExhausted { t, endpoint: end });
        }
    }
    let k = state.k;
    if x.len() != k {
        return Err(CusumError::DimensionMismatch { expected: k, got: x.len() });
    }
    let retained = state.cum.len() / k;
    if state.kind == DetectorKind::Stacked {
        if let Some(cap) = state.capacity {
            if retained >= cap {
                return Err(CusumError::CapacityExceeded { cap });
            }
        }
    }
    let w = state.rls.step(x, y)?;
    let last = &state.cum[(retained - 1) * k..retained * k];
    let next: Vec<f64> = last.iter().zip(x).map(|(s, xi)| s + xi * w).collect();
    match state.kind {
        DetectorKind::Stacked => state.cum.extend_from_slice(&next),
        _ => {
            state.cum.truncate(k);
            state.cum.extend_from_slice(&next);
        }
    }
    state.t_now = t;
    let row = state.cum.len() / k - 1;
    let z_new = state.z_of(row);
    let nu = z_new.len();
    state.z.truncate(row * nu);
    state.z.extend_from_slice(&z_new);

    let t_hist = state.t_hist as f64;
    let b = state.boundary;
    let (value, d, start) = match state.kind {
        DetectorKind::Stacked => {
            // pairs (a, row) with a = s − 1 − T
            let mut best = (0.0_f64, b.d(row as f64 / t_hist), t);
            let mut best_ratio = -1.0_f64;
            for a in 0..row {
                let d = b.d((row - a) as f64 / t_hist);
                let v = diff_norm(&state.z, nu, row, a);
                if v / d > best_ratio {
                    best_ratio = v / d;
                    best = (v, d, state.t_hist + a + 1);
                }
            }
            (best.0, best.1, Some(best.2))
        }
        _ => (diff_norm(&state.z, nu, row, 0), b.d((t - state.t_hist) as f64 / t_hist), None),
    };
    let statistic = value / d;
    state.running_max = state.running_max.max(statistic);
    if state.stopped_at.is_none() && statistic >= b.lambda {
        state.stopped_at = Some(t);
    }
    Ok(MonitorStatus {
        t,
        detector_value: value,
        boundary_at_t: b.lambda * d,
        statistic,
        window_start: start,
        crossed: state.stopped_at.is_some(),
        stopping_time: state.stopped_at,
    })
}

/// Feeds a stream until it ends, the horizon is reached or, with
/// `stop_on_detect`, the boundary is crossed.
pub fn monitor_run<I, X>(
    state: &mut MonitorState,
    stream: I,
    true_break: Option<usize>,
    stop_on_detect: bool,
) -> Result<MonitorReport>
where
    I: IntoIterator<Item = (X, f64)>,
    X: AsRef<[f64]>,
{
    let mut trace = Vec::new();
    let mut horizon_reached = false;
    for (x, y) in stream {
        if state.endpoint().is_some_and(|end| state.t_now >= end) {
            horizon_reached = true;
            break;
        }
        let status = monitor_step(state, x.as_ref(), y)?;
        trace.push(status);
        if stop_on_detect && status.crossed {
            break;
        }
    }
    if state.endpoint().is_some_and(|end| state.t_now >= end) {
        horizon_reached = true;
    }
    let delay = match (state.stopped_at, true_break) {
        (Some(td), Some(tb)) => Some(td as i64 - tb as i64),
        _ => None,
    };
    Ok(MonitorReport {
        detector: state.kind,
        lambda: state.lambda(),
        t_hist: state.t_hist,
        last_t: state.t_now,
        stopping_time: state.stopped_at,
        delay,
        running_max: state.running_max,
        horizon_reached,
        trace,
    })
}

/// Standardized monitoring path of a complete series, for batch use.
///
/// `data` holds the history in rows `1..=t_hist` followed by the monitoring
/// period. Returns `Z_t` for `t = T..=N` (row-major, `ν` columns, first row
/// zero); identical in value to a [`MonitorState`] fed the same rows.
pub fn monitoring_path(data: &Dataset, t_hist: usize, projection: Option<&DMatrix<f64>>) -> Result<Vec<f64>> {
    if t_hist >= data.len() {
        return Err(CusumError::EmptyRange(format!("history of {t_hist} leaves no monitoring period")));
    }
    let hist = data.slice(0, t_hist)?;
    let fit = fit_history(&hist)?;
    let k = data.k();
    let proj = standardizer(fit.sigma_hat, t_hist, &fit.c_inv_sqrt, projection);
    let nu = proj.len() / k;
    let mut rls = fit.rls.clone();
    rls.refactorize();
    let mut diff = vec![0.0; k];
    let mut z = vec![0.0; (data.len() - t_hist + 1) * nu];
    for (i, (x, y)) in data.rows().enumerate().skip(t_hist) {
        let w = rls.step(x, y)?;
        for (d, xi) in diff.iter_mut().zip(x) {
            *d += xi * w;
        }
        let row = i + 1 - t_hist;
        for (c, r) in proj.chunks_exact(k).enumerate() {
            z[row * nu + c] = r.iter().zip(&diff).map(|(a, b)| a * b).sum();
        }
    }
    Ok(z)
}
