//! Retrospective CUSUM detectors on recursive residuals.
//!
//! All detectors are built from the standardized path
//!
//! ```text
//! Q_{t,T} = (σ̂√T)⁻¹ C_T^{-1/2} Σ_{j≤t} x_j w_j,   t = 0..T,
//! ```
//!
//! and differences of it: the backward detector is `Q_T − Q_{t−1}` and the
//! stacked detector is `Q_t − Q_{s−1}` over the triangle `1 ≤ s ≤ t ≤ T`.
//! Norms are maximum norms over the coordinates.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{CusumError, Result};
use crate::regression::{fit_history, Dataset, HistoryFit};
use crate::tables;

/// Which detector to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectorKind {
    /// Forward CUSUM `Q`.
    #[serde(rename = "q")]
    Forward,
    /// Backward CUSUM `BQ` (retrospective only).
    #[serde(rename = "bq")]
    Backward,
    /// Stacked backward CUSUM `SBQ`.
    #[serde(rename = "sbq")]
    Stacked,
}

impl fmt::Display for DetectorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DetectorKind::Forward => "q",
            DetectorKind::Backward => "bq",
            DetectorKind::Stacked => "sbq",
        })
    }
}

impl FromStr for DetectorKind {
    type Err = CusumError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "q" | "forward" => Ok(DetectorKind::Forward),
            "bq" | "backward" => Ok(DetectorKind::Backward),
            "sbq" | "stacked" => Ok(DetectorKind::Stacked),
            other => Err(CusumError::InvalidConfig(format!("unknown detector '{other}'"))),
        }
    }
}

/// Testing period.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "type", content = "m")]
pub enum Horizon {
    /// Within the historical sample, `1 ≤ t ≤ T`.
    Retrospective,
    /// Monitoring `T < t ≤ ⌊mT⌋`, `m > 1`.
    Finite(f64),
    /// Open-ended monitoring.
    Infinite,
}

impl Horizon {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Horizon::Finite(m) if !(m > 1.0 && m.is_finite()) => {
                Err(CusumError::InvalidConfig(format!("finite horizon needs 1 < m < ∞, got {m}")))
            }
            _ => Ok(()),
        }
    }

    /// Last admissible monitoring index for a history of length `t_len`.
    pub fn endpoint(&self, t_len: usize) -> Option<usize> {
        match *self {
            Horizon::Finite(m) => Some((m * t_len as f64 + 1e-9).floor() as usize),
            Horizon::Retrospective => Some(t_len),
            Horizon::Infinite => None,
        }
    }
}

impl fmt::Display for Horizon {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Horizon::Retrospective => f.write_str("ret"),
            Horizon::Finite(m) => write!(f, "{m}"),
            Horizon::Infinite => f.write_str("inf"),
        }
    }
}

impl FromStr for Horizon {
    type Err = CusumError;
    fn from_str(s: &str) -> Result<Self> {
        let h = match s.to_ascii_lowercase().as_str() {
            "ret" | "retro" | "retrospective" => Horizon::Retrospective,
            "inf" | "infinite" | "∞" => Horizon::Infinite,
            other => Horizon::Finite(
                other.parse().map_err(|_| CusumError::InvalidConfig(format!("bad horizon '{s}'")))?,
            ),
        };
        h.validate()?;
        Ok(h)
    }
}

// ---------------------------------------------------------------------------
// Path
// ---------------------------------------------------------------------------

/// Piecewise-constant vector process `q[0..=T]`, `q[0] = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CusumPath {
    q: Vec<f64>,
    nu: usize,
}

impl CusumPath {
    /// Wraps a row-major `(T+1) × nu` buffer.
    pub fn from_raw(q: Vec<f64>, nu: usize) -> Result<Self> {
        if nu == 0 || q.len() % nu != 0 || q.len() < nu {
            return Err(CusumError::DimensionMismatch { expected: nu, got: q.len() });
        }
        Ok(CusumPath { q, nu })
    }

    /// Sample size `T` (the path has `T + 1` points).
    pub fn len(&self) -> usize {
        self.q.len() / self.nu - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Effective dimension `ν`.
    pub fn nu(&self) -> usize {
        self.nu
    }

    pub fn point(&self, t: usize) -> &[f64] {
        &self.q[t * self.nu..(t + 1) * self.nu]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.q
    }

    /// `‖q[b] − q[a]‖_max`.
    #[inline]
    pub fn diff_norm(&self, b: usize, a: usize) -> f64 {
        let nu = self.nu;
        let (pb, pa) = (&self.q[b * nu..(b + 1) * nu], &self.q[a * nu..(a + 1) * nu]);
        pb.iter().zip(pa).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }
}

/// `q[t] = (σ̂√T)⁻¹ C_T^{-1/2} Σ_{j≤t} x_j w_j`.
pub fn cusum_path(fit: &HistoryFit) -> CusumPath {
    let (t_len, k) = (fit.len(), fit.k());
    let scale = 1.0 / (fit.sigma_hat * (t_len as f64).sqrt());
    let a: Vec<f64> = fit.c_inv_sqrt.transpose().as_slice().iter().map(|v| v * scale).collect();
    let mut q = vec![0.0; (t_len + 1) * k];
    let mut sum = vec![0.0; k];
    for t in 0..t_len {
        for (s, v) in sum.iter_mut().zip(fit.xw_row(t)) {
            *s += v;
        }
        let row = &mut q[(t + 1) * k..(t + 2) * k];
        crate::linalg::mat_vec(&a, &sum, row);
    }
    CusumPath { q, nu: k }
}

/// Projects the path onto the columns of an orthonormal `k × l` matrix `H`:
/// `q̃[t] = H' q[t]`.
pub fn partial_project(path: &CusumPath, h: &DMatrix<f64>) -> Result<CusumPath> {
    check_orthonormal(h, path.nu)?;
    let l = h.ncols();
    let mut q = Vec::with_capacity((path.len() + 1) * l);
    for t in 0..=path.len() {
        let p = path.point(t);
        for j in 0..l {
            q.push((0..path.nu).map(|i| h[(i, j)] * p[i]).sum());
        }
    }
    Ok(CusumPath { q, nu: l })
}

pub(crate) fn check_orthonormal(h: &DMatrix<f64>, k: usize) -> Result<()> {
    if h.nrows() != k || h.ncols() == 0 || h.ncols() > k {
        return Err(CusumError::DimensionMismatch { expected: k, got: h.nrows() });
    }
    let gram = h.transpose() * h;
    let dev = (gram - DMatrix::<f64>::identity(h.ncols(), h.ncols())).amax();
    if dev > 1e-8 {
        return Err(CusumError::NotOrthonormal { deviation: dev });
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Boundaries
// ---------------------------------------------------------------------------

/// Shape `d(r)` of the critical boundary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum BoundaryShape {
    /// `d(r) = 1 + 2r`.
    Linear,
    /// `d(r) = √((r+1)·ln((r+1)/α²))`, calibrated to size `α` on its own.
    Radical { alpha: f64 },
}

impl BoundaryShape {
    #[inline]
    pub fn d(&self, r: f64) -> f64 {
        match *self {
            BoundaryShape::Linear => 1.0 + 2.0 * r,
            BoundaryShape::Radical { alpha } => ((r + 1.0) * ((r + 1.0) / (alpha * alpha)).ln()).sqrt(),
        }
    }
}

/// Critical boundary `b(r) = λ · d(r)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Boundary {
    pub shape: BoundaryShape,
    pub lambda: f64,
}

impl Boundary {
    pub fn linear(lambda: f64) -> Result<Self> {
        Boundary::new(BoundaryShape::Linear, lambda)
    }

    /// Radical boundary with `λ = 1`.
    pub fn radical(alpha: f64) -> Result<Self> {
        Boundary::new(BoundaryShape::Radical { alpha }, 1.0)
    }

    /// Validates `λ > 0` and, on a grid, that `d` is positive, strictly
    /// increasing and dominates `√(r+1)`.
    pub fn new(shape: BoundaryShape, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(CusumError::InvalidBoundary(format!("λ must be positive, got {lambda}")));
        }
        if let BoundaryShape::Radical { alpha } = shape {
            if !(alpha > 0.0 && alpha < 1.0) {
                return Err(CusumError::InvalidBoundary(format!("α must lie in (0, 1), got {alpha}")));
            }
        }
        let mut prev = shape.d(0.0);
        if !(prev > 0.0) {
            return Err(CusumError::InvalidBoundary("d(0) must be positive".into()));
        }
        let mut worst = (1.0f64).sqrt() / prev;
        for i in 1..=4000 {
            let r = 1e-3 * f64::from(i) * f64::from(i);
            let d = shape.d(r);
            if !(d > prev) {
                return Err(CusumError::InvalidBoundary(format!("d is not increasing at r = {r}")));
            }
            worst = worst.max((r + 1.0).sqrt() / d);
            prev = d;
        }
        if !worst.is_finite() {
            return Err(CusumError::InvalidBoundary("√(r+1)/d(r) is unbounded".into()));
        }
        Ok(Boundary { shape, lambda })
    }

    /// Same shape, different `λ` (used for size-adjusted radical boundaries).
    pub fn with_lambda(self, lambda: f64) -> Result<Self> {
        Boundary::new(self.shape, lambda)
    }

    #[inline]
    pub fn d(&self, r: f64) -> f64 {
        self.shape.d(r)
    }

    pub fn value(&self, r: f64) -> Result<f64> {
        boundary_value(self, r)
    }
}

/// `b(r) = λ d(r)` for `r ≥ 0`.
pub fn boundary_value(b: &Boundary, r: f64) -> Result<f64> {
    if r < 0.0 || r.is_nan() {
        return Err(CusumError::NegativeArgument(r));
    }
    Ok(b.lambda * b.d(r))
}

// ---------------------------------------------------------------------------
// Statistics
// ---------------------------------------------------------------------------

/// One point of a detector trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub t: usize,
    /// Detector norm (forward/backward) or the normalized per-`t` maximum
    /// `max_s ‖SBQ_{s,t}‖/d((t−s+1)/T)` (stacked).
    pub value: f64,
    /// Boundary the value is compared with.
    pub boundary: f64,
}

/// Outcome of a retrospective test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub detector: DetectorKind,
    /// Maximum statistic `max_t ‖·‖/d(·)`.
    pub statistic: f64,
    pub lambda: f64,
    pub reject: bool,
    /// Smallest `t` (1-based) at which the detector reaches its boundary.
    pub first_crossing: Option<usize>,
    /// 1-based `s` of the crossing window (stacked detector only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crossing_start: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_t: Option<Vec<TracePoint>>,
}

impl TestReport {
    fn from_ratios(
        detector: DetectorKind,
        lambda: f64,
        ratios: impl Iterator<Item = (usize, f64, f64)>,
    ) -> TestReport {
        let mut statistic = 0.0_f64;
        let mut first = None;
        let mut per_t = Vec::new();
        for (t, value, d) in ratios {
            let r = value / d;
            statistic = statistic.max(r);
            if first.is_none() && r >= lambda {
                first = Some(t);
            }
            per_t.push(TracePoint { t, value, boundary: lambda * d });
        }
        TestReport {
            detector,
            statistic,
            lambda,
            reject: statistic >= lambda,
            first_crossing: first,
            crossing_start: None,
            per_t: Some(per_t),
        }
    }
}

/// `max_{1≤t≤T} ‖Q_{t,T}‖/d(t/T)`.
pub fn forward_max_stat(path: &CusumPath, b: &Boundary) -> TestReport {
    let t_len = path.len() as f64;
    TestReport::from_ratios(
        DetectorKind::Forward,
        b.lambda,
        (1..=path.len()).map(|t| (t, path.diff_norm(t, 0), b.d(t as f64 / t_len))),
    )
}

/// `max_{1≤t≤T} ‖Q_{T,T} − Q_{t−1,T}‖/d((T−t+1)/T)`.
pub fn backward_max_stat(path: &CusumPath, b: &Boundary) -> TestReport {
    let n = path.len();
    let t_len = n as f64;
    TestReport::from_ratios(
        DetectorKind::Backward,
        b.lambda,
        (1..=n).map(|t| (t, path.diff_norm(n, t - 1), b.d((n - t + 1) as f64 / t_len))),
    )
}

/// `max_{1≤t≤T} max_{1≤s≤t} ‖Q_{t,T} − Q_{s−1,T}‖/d((t−s+1)/T)` by explicit
/// double loop.
pub fn stacked_max_stat(path: &CusumPath, b: &Boundary) -> TestReport {
    let n = path.len();
    let t_len = n as f64;
    let d: Vec<f64> = (0..=n).map(|span| b.d(span as f64 / t_len)).collect();
    let mut statistic = 0.0_f64;
    let mut first = None;
    let mut per_t = Vec::with_capacity(n);
    for t in 1..=n {
        let mut m_t = 0.0_f64;
        for s in 1..=t {
            let r = path.diff_norm(t, s - 1) / d[t - s + 1];
            if first.is_none() && r >= b.lambda {
                first = Some((t, s));
            }
            m_t = m_t.max(r);
        }
        statistic = statistic.max(m_t);
        per_t.push(TracePoint { t, value: m_t, boundary: b.lambda });
    }
    TestReport {
        detector: DetectorKind::Stacked,
        statistic,
        lambda: b.lambda,
        reject: statistic >= b.lambda,
        first_crossing: first.map(|f| f.0),
        crossing_start: first.map(|f| f.1),
        per_t: Some(per_t),
    }
}

/// Runs the configured detector's maximum statistic on a path.
pub fn max_stat(kind: DetectorKind, path: &CusumPath, b: &Boundary) -> TestReport {
    match kind {
        DetectorKind::Forward => forward_max_stat(path, b),
        DetectorKind::Backward => backward_max_stat(path, b),
        DetectorKind::Stacked => stacked_max_stat(path, b),
    }
}

// ---------------------------------------------------------------------------
// Configured tests
// ---------------------------------------------------------------------------

/// Detector, boundary and calibration for a test or monitoring run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub kind: DetectorKind,
    pub shape: BoundaryShape,
    pub alpha: f64,
    /// Explicit critical value; looked up in the tables when absent.
    pub lambda: Option<f64>,
    pub horizon: Horizon,
    /// Orthonormal `k × l` projection for partial-break tests.
    pub projection: Option<DMatrix<f64>>,
}

impl DetectorConfig {
    /// Linear boundary, tabulated `λ`, no projection.
    pub fn new(kind: DetectorKind, alpha: f64, horizon: Horizon) -> Self {
        DetectorConfig { kind, shape: BoundaryShape::Linear, alpha, lambda: None, horizon, projection: None }
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = Some(lambda);
        self
    }

    pub fn with_projection(mut self, h: DMatrix<f64>) -> Self {
        self.projection = Some(h);
        self
    }

    pub fn with_shape(mut self, shape: BoundaryShape) -> Self {
        self.shape = shape;
        self
    }

    /// Effective dimension `ν` for a model with `k` regressors.
    pub fn nu(&self, k: usize) -> usize {
        self.projection.as_ref().map_or(k, |h| h.ncols())
    }

    /// Checks internal consistency for a model with `k` regressors.
    pub fn validate(&self, k: usize) -> Result<()> {
        self.horizon.validate()?;
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(CusumError::InvalidConfig(format!("α must lie in (0, 1), got {}", self.alpha)));
        }
        if let Some(h) = &self.projection {
            check_orthonormal(h, k)?;
        }
        if self.kind == DetectorKind::Backward && self.horizon != Horizon::Retrospective {
            return Err(CusumError::InvalidConfig("the backward detector is retrospective only".into()));
        }
        if let BoundaryShape::Radical { .. } = self.shape {
            if self.kind != DetectorKind::Forward
                || self.horizon == Horizon::Retrospective
                || self.nu(k) != 1
            {
                return Err(CusumError::InvalidConfig(
                    "the radical boundary is only available for univariate forward monitoring".into(),
                ));
            }
        }
        Ok(())
    }

    /// The boundary implied by this configuration.
    pub fn boundary(&self, k: usize) -> Result<Boundary> {
        self.validate(k)?;
        match self.shape {
            BoundaryShape::Radical { .. } => Boundary::new(self.shape, self.lambda.unwrap_or(1.0)),
            BoundaryShape::Linear => {
                let lambda = match self.lambda {
                    Some(l) => l,
                    None => tables::lookup(self.kind, self.nu(k), self.alpha, self.horizon)?,
                };
                Boundary::linear(lambda)
            }
        }
    }
}

/// Fits the sample, builds the path, applies any projection and evaluates
/// the configured maximum statistic.
pub fn retrospective_test(data: &Dataset, cfg: &DetectorConfig) -> Result<TestReport> {
    if cfg.horizon != Horizon::Retrospective {
        return Err(CusumError::InvalidConfig("retrospective test needs a retrospective horizon".into()));
    }
    let b = cfg.boundary(data.k())?;
    let fit = fit_history(data)?;
    let mut path = cusum_path(&fit);
    if let Some(h) = &cfg.projection {
        path = partial_project(&path, h)?;
    }
    Ok(max_stat(cfg.kind, &path, &b))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hand_path() -> CusumPath {
        let data = Dataset::intercept_only(vec![0.0, 2.0, 1.0]).unwrap();
        cusum_path(&fit_history(&data).unwrap())
    }

    #[test]
    fn hand_example_path() {
        let p = hand_path();
        let expect = [0.0, 0.0, 0.5_f64.sqrt(), 0.5_f64.sqrt()];
        for (t, e) in expect.iter().enumerate() {
            assert!((p.point(t)[0] - e).abs() < 1e-12, "t={t}");
        }
    }

    #[test]
    fn hand_example_statistics() {
        let p = hand_path();
        let b = Boundary::linear(1.0).unwrap();
        let expect = 0.5_f64.sqrt() / (1.0 + 4.0 / 3.0);
        let f = forward_max_stat(&p, &b);
        let bq = backward_max_stat(&p, &b);
        assert!((f.statistic - expect).abs() < 1e-12);
        assert!((bq.statistic - expect).abs() < 1e-12);
        assert!((expect - 0.30305).abs() < 1e-5);
        assert!(!f.reject && f.first_crossing.is_none());
        let s = stacked_max_stat(&p, &b);
        assert!(s.statistic >= f.statistic && s.statistic >= bq.statistic);
    }

    #[test]
    fn zero_path_has_zero_statistics() {
        let p = CusumPath::from_raw(vec![0.0; 11], 1).unwrap();
        let b = Boundary::linear(0.948).unwrap();
        for kind in [DetectorKind::Forward, DetectorKind::Backward, DetectorKind::Stacked] {
            let r = max_stat(kind, &p, &b);
            assert_eq!(r.statistic, 0.0);
            assert!(!r.reject);
        }
    }

    #[test]
    fn boundary_values() {
        let lin = Boundary::linear(0.948).unwrap();
        assert!((lin.value(0.0).unwrap() - 0.948).abs() < 1e-15);
        assert!((lin.value(0.5).unwrap() - 1.896).abs() < 1e-15);
        let rad = Boundary::radical(0.05).unwrap();
        assert!((rad.value(0.0).unwrap() - 400.0_f64.ln().sqrt()).abs() < 1e-14);
        assert!((rad.value(0.0).unwrap() - 2.44775).abs() < 1e-5);
        assert!(matches!(lin.value(-0.1), Err(CusumError::NegativeArgument(_))));
        assert!(Boundary::linear(0.0).is_err());
        assert!(Boundary::radical(1.5).is_err());
    }

    #[test]
    fn crossing_flags_are_consistent() {
        let p = hand_path();
        let b = Boundary::linear(0.25).unwrap();
        for kind in [DetectorKind::Forward, DetectorKind::Backward, DetectorKind::Stacked] {
            let r = max_stat(kind, &p, &b);
            assert_eq!(r.reject, r.statistic >= r.lambda);
            assert_eq!(r.reject, r.first_crossing.is_some());
        }
    }

    #[test]
    fn projection_identity_and_errors() {
        let p = hand_path();
        let same = partial_project(&p, &DMatrix::identity(1, 1)).unwrap();
        assert_eq!(same, p);
        let bad = DMatrix::from_row_slice(1, 1, &[2.0]);
        assert!(matches!(partial_project(&p, &bad), Err(CusumError::NotOrthonormal { .. })));
    }

    #[test]
    fn config_validation() {
        let data = Dataset::intercept_only((0..20).map(|i| (i % 3) as f64).collect()).unwrap();
        let radical = DetectorConfig::new(DetectorKind::Stacked, 0.05, Horizon::Infinite)
            .with_shape(BoundaryShape::Radical { alpha: 0.05 });
        assert!(radical.validate(1).is_err());
        let bq_mon = DetectorConfig::new(DetectorKind::Backward, 0.05, Horizon::Infinite);
        assert!(bq_mon.validate(1).is_err());
        let unknown = DetectorConfig::new(DetectorKind::Forward, 0.07, Horizon::Retrospective);
        assert!(matches!(retrospective_test(&data, &unknown), Err(CusumError::UnknownCriticalValue(_))));
    }

    #[test]
    fn horizon_parsing() {
        assert_eq!("ret".parse::<Horizon>().unwrap(), Horizon::Retrospective);
        assert_eq!("inf".parse::<Horizon>().unwrap(), Horizon::Infinite);
        assert_eq!("4".parse::<Horizon>().unwrap(), Horizon::Finite(4.0));
        assert!("0.5".parse::<Horizon>().is_err());
        assert_eq!(Horizon::Finite(1.5).endpoint(100), Some(150));
    }
}
