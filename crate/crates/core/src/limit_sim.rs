//! Monte Carlo simulation of the limiting processes.
//!
//! Every limit is a functional of a `ν`-dimensional Brownian motion `W`
//! sampled on a grid:
//!
//! * retrospective: `W` on `[0, 1]` with `n_grid` steps,
//! * finite horizon `m`: `W` on `[0, m − 1]` with `n_grid` steps per unit
//!   length (the monitoring period `(T, mT]` rescaled by `T`),
//! * infinite horizon: a Brownian bridge `B` on `r_i = i/n_grid`,
//!   `i < n_grid`, mapped to `V(u) = B(r)/(1 − r)` at `u = r/(1 − r)`.
//!   `V` is a Brownian motion in `u` and `d(u_b − u_a)` is exactly the bridge
//!   boundary `((1 − r_b)(1 − r_a))⁻¹(r_b − r_a)` form, so the stacked scan of
//!   [`crate::scan`] applies unchanged.
//!
//! Local alternatives add a deterministic drift `h` to the first coordinate.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::detectors::{BoundaryShape, DetectorKind, Horizon};
use crate::error::{CusumError, Result};
use crate::rng::{domain_tag, par_reps, stream, McRng};
use crate::scan::{stacked_first_crossing, stacked_sup};

/// Version tag written into every serialized table.
pub const TABLE_SCHEMA_VERSION: u32 = 1;

/// Grid, replication budget and seed of a simulation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n_grid: usize,
    pub n_reps: usize,
    pub seed: u64,
    /// Worker threads; `None` uses the global pool. Results do not depend on it.
    #[serde(skip)]
    pub workers: Option<usize>,
}

impl SimConfig {
    /// 2,000 grid points and 20,000 replications.
    pub fn desk(seed: u64) -> Self {
        SimConfig { n_grid: 2000, n_reps: 20_000, seed, workers: None }
    }

    /// 10,000 grid points and 100,000 replications.
    pub fn paper(seed: u64) -> Self {
        SimConfig { n_grid: 10_000, n_reps: 100_000, seed, workers: None }
    }

    pub fn with_workers(mut self, workers: Option<usize>) -> Self {
        self.workers = workers;
        self
    }
}

// ---------------------------------------------------------------------------
// Drift functions
// ---------------------------------------------------------------------------

/// Single break of size `c/σ` at relative location `τ*`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BreakSpec {
    pub c_over_sigma: f64,
    pub tau_star: f64,
}

impl BreakSpec {
    pub fn new(c_over_sigma: f64, tau_star: f64) -> Result<Self> {
        if !(c_over_sigma >= 0.0 && c_over_sigma.is_finite()) {
            return Err(CusumError::InvalidConfig(format!("c/σ must be non-negative, got {c_over_sigma}")));
        }
        if !(tau_star > 0.0 && tau_star.is_finite()) {
            return Err(CusumError::InvalidConfig(format!("τ* must be positive, got {tau_star}")));
        }
        Ok(BreakSpec { c_over_sigma, tau_star })
    }
}

/// `h(r) = (c/σ) τ* ln(r/τ*)` for `r ≥ τ*`, zero before.
pub fn h_single_break(r: f64, spec: &BreakSpec) -> f64 {
    if r <= spec.tau_star {
        0.0
    } else {
        spec.c_over_sigma * spec.tau_star * (r / spec.tau_star).ln()
    }
}

/// Right-continuous step function on `[0, ∞)`, in units of `σ`.
///
/// `knots[0]` must be `0`; `values[j]` holds on `[knots[j], knots[j + 1])`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepFunction {
    knots: Vec<f64>,
    values: Vec<f64>,
}

impl StepFunction {
    pub fn new(knots: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if knots.is_empty() || knots.len() != values.len() {
            return Err(CusumError::DimensionMismatch { expected: knots.len(), got: values.len() });
        }
        if knots[0] != 0.0 || knots.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(CusumError::InvalidConfig("knots must start at 0 and increase".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(CusumError::InvalidConfig("step values must be finite".into()));
        }
        Ok(StepFunction { knots, values })
    }

    /// `c · 1{r ≥ τ*}`.
    pub fn single_break(spec: &BreakSpec) -> Self {
        StepFunction { knots: vec![0.0, spec.tau_star], values: vec![0.0, spec.c_over_sigma] }
    }

    pub fn eval(&self, r: f64) -> f64 {
        let j = self.knots.partition_point(|&k| k <= r).saturating_sub(1);
        self.values[j]
    }
}

/// `h(r) = ∫₀^r g(z) dz − ∫₀^r z⁻¹ ∫₀^z g(v) dv dz` for a step function `g`.
///
/// On a segment `[z₀, z₁]` with value `v` and `G(z₀) = ∫₀^{z₀} g`, the two
/// integrals differ by `(v z₀ − G(z₀)) ln(z₁/z₀)`; the first segment
/// contributes nothing.
pub fn h_general(r: f64, g: &StepFunction) -> f64 {
    let mut h = 0.0;
    let mut big_g = 0.0;
    for (j, (&z0, &v)) in g.knots.iter().zip(&g.values).enumerate() {
        if z0 >= r {
            break;
        }
        let z1 = g.knots.get(j + 1).copied().unwrap_or(f64::INFINITY).min(r);
        if z0 > 0.0 {
            h += (v * z0 - big_g) * (z1 / z0).ln();
        }
        big_g += v * (z1 - z0);
    }
    h
}

// ---------------------------------------------------------------------------
// Sampler
// ---------------------------------------------------------------------------

/// Abscissae of a grid: `x_i` is the boundary argument at path index `i`.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Abscissa {
    /// `x_i = i · step`.
    Uniform { step: f64 },
    /// `x_i = r_i/(1 − r_i)`, `r_i = i/n`.
    Bridge { n: f64 },
}

impl Abscissa {
    #[inline]
    fn at(self, i: usize) -> f64 {
        match self {
            Abscissa::Uniform { step } => i as f64 * step,
            Abscissa::Bridge { n } => {
                let r = i as f64 / n;
                r / (1.0 - r)
            }
        }
    }
}

/// Discretization of the limiting process for one `(ν, horizon)` pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LimitGrid {
    pub n_grid: usize,
    pub nu: usize,
    pub horizon: Horizon,
}

impl LimitGrid {
    pub fn new(n_grid: usize, nu: usize, horizon: Horizon) -> Result<Self> {
        if n_grid == 0 || nu == 0 {
            return Err(CusumError::InvalidConfig("grid size and dimension must be positive".into()));
        }
        horizon.validate()?;
        Ok(LimitGrid { n_grid, nu, horizon })
    }

    /// Number of path increments.
    pub fn steps(&self) -> usize {
        match self.horizon {
            Horizon::Retrospective | Horizon::Infinite => self.n_grid,
            Horizon::Finite(m) => (((m - 1.0) * self.n_grid as f64).round() as usize).max(1),
        }
    }

    fn abscissa(&self) -> Abscissa {
        match self.horizon {
            Horizon::Retrospective | Horizon::Finite(_) => Abscissa::Uniform { step: 1.0 / self.n_grid as f64 },
            Horizon::Infinite => Abscissa::Bridge { n: self.n_grid as f64 },
        }
    }

    /// Index of the last usable path point.
    fn last(&self) -> usize {
        match self.horizon {
            Horizon::Infinite => self.n_grid - 1,
            _ => self.steps(),
        }
    }

    /// Calendar location (in units of `T`) of path index `i`.
    pub fn location(&self, i: usize) -> f64 {
        match self.horizon {
            Horizon::Retrospective => i as f64 / self.n_grid as f64,
            Horizon::Finite(_) => 1.0 + i as f64 / self.n_grid as f64,
            Horizon::Infinite => 1.0 + self.abscissa().at(i),
        }
    }
}

/// Reusable buffers for one worker.
#[derive(Debug, Clone, Default)]
pub struct Scratch {
    path: Vec<f64>,
}

fn check_kind(kind: DetectorKind, horizon: Horizon, shape: BoundaryShape) -> Result<()> {
    if kind == DetectorKind::Backward && horizon != Horizon::Retrospective {
        return Err(CusumError::InvalidConfig("the backward detector is retrospective only".into()));
    }
    if kind == DetectorKind::Stacked && shape != BoundaryShape::Linear {
        return Err(CusumError::InvalidConfig("the stacked scan needs the linear boundary".into()));
    }
    Ok(())
}

/// Fills `scratch.path` with one draw of `W` (or `V` for the infinite
/// horizon) plus the drift `drift(x_i) − drift(x_0)` on coordinate 0.
fn fill_path(grid: &LimitGrid, rng: &mut McRng, drift: Option<&dyn Fn(f64) -> f64>, scratch: &mut Scratch) {
    let (nu, steps) = (grid.nu, grid.steps());
    let path = &mut scratch.path;
    path.clear();
    path.resize((steps + 1) * nu, 0.0);
    let sd = (1.0 / grid.n_grid as f64).sqrt();
    for i in 1..=steps {
        for c in 0..nu {
            let z: f64 = rng.sample(StandardNormal);
            path[i * nu + c] = path[(i - 1) * nu + c] + sd * z;
        }
    }
    if grid.horizon == Horizon::Infinite {
        let n = grid.n_grid as f64;
        for c in 0..nu {
            let w1 = path[steps * nu + c];
            for i in 0..steps {
                let r = i as f64 / n;
                path[i * nu + c] = (path[i * nu + c] - r * w1) / (1.0 - r);
            }
        }
        path.truncate(steps * nu);
    }
    if let Some(h) = drift {
        let ab = grid.abscissa();
        let h0 = h(ab.at(0));
        for i in 0..=grid.last() {
            path[i * nu] += h(ab.at(i)) - h0;
        }
    }
}

#[inline]
fn norm_diff(path: &[f64], nu: usize, b: usize, a: usize) -> f64 {
    (0..nu).map(|c| (path[b * nu + c] - path[a * nu + c]).abs()).fold(0.0, f64::max)
}

/// The λ-free maximum statistic of `path`.
fn functional(kind: DetectorKind, grid: &LimitGrid, shape: BoundaryShape, path: &[f64]) -> f64 {
    let (nu, last, ab) = (grid.nu, grid.last(), grid.abscissa());
    match kind {
        DetectorKind::Forward => {
            (1..=last).map(|i| norm_diff(path, nu, i, 0) / shape.d(ab.at(i))).fold(0.0, f64::max)
        }
        DetectorKind::Backward => {
            let n = last as f64;
            (1..=last).map(|i| norm_diff(path, nu, last, i - 1) / shape.d((last - i + 1) as f64 / n)).fold(0.0, f64::max)
        }
        DetectorKind::Stacked => stacked_sup(&path[..(last + 1) * nu], nu, 0, |i| ab.at(i)).value,
    }
}

/// Path index of the first crossing of `λ d(·)`, or `None`.
///
/// The backward detector is scanned in its own cumulation order (from the end
/// of the sample), so the index returned is the span `n − t + 1`.
fn first_crossing(kind: DetectorKind, grid: &LimitGrid, shape: BoundaryShape, lambda: f64, path: &[f64]) -> Option<usize> {
    let (nu, last, ab) = (grid.nu, grid.last(), grid.abscissa());
    match kind {
        DetectorKind::Forward => (1..=last).find(|&i| norm_diff(path, nu, i, 0) >= lambda * shape.d(ab.at(i))),
        DetectorKind::Backward => {
            let n = last as f64;
            (1..=last).find(|&span| norm_diff(path, nu, last, last - span) >= lambda * shape.d(span as f64 / n))
        }
        DetectorKind::Stacked => {
            stacked_first_crossing(&path[..(last + 1) * nu], nu, 0, |i| ab.at(i), lambda).map(|(b, _)| b)
        }
    }
}

/// One draw of the limiting maximum statistic for `(kind, grid, shape)`.
pub fn simulate_limit_draw(
    kind: DetectorKind,
    grid: &LimitGrid,
    shape: BoundaryShape,
    rng: &mut McRng,
    scratch: &mut Scratch,
) -> Result<f64> {
    check_kind(kind, grid.horizon, shape)?;
    fill_path(grid, rng, None, scratch);
    Ok(functional(kind, grid, shape, &scratch.path))
}

fn domain(label: &str, kind: DetectorKind, grid: &LimitGrid, shape: BoundaryShape) -> u64 {
    domain_tag(&format!("{label}/{kind}/{}/{}/{:?}", grid.nu, grid.horizon, shape_tag(shape)))
}

fn shape_tag(shape: BoundaryShape) -> String {
    match shape {
        BoundaryShape::Linear => "linear".into(),
        BoundaryShape::Radical { alpha } => format!("radical{alpha}"),
    }
}

/// All `n_reps` draws, in replication order.
pub fn simulate_draws(
    kind: DetectorKind,
    nu: usize,
    horizon: Horizon,
    shape: BoundaryShape,
    cfg: &SimConfig,
) -> Result<Vec<f64>> {
    let grid = LimitGrid::new(cfg.n_grid, nu, horizon)?;
    check_kind(kind, horizon, shape)?;
    let dom = domain("null", kind, &grid, shape);
    Ok(par_reps(cfg.n_reps, cfg.workers, Scratch::default, |rep, scratch| {
        let mut rng = stream(cfg.seed, dom, rep);
        fill_path(&grid, &mut rng, None, scratch);
        functional(kind, &grid, shape, &scratch.path)
    }))
}

/// Nearest-rank `p`-quantile of ascending `sorted`: the value at rank
/// `⌈p n⌉`.
pub fn quantile_nearest_rank(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let rank = ((p * n as f64) - 1e-9).ceil().max(1.0) as usize;
    sorted[rank.min(n) - 1]
}

/// Sorts a sample of draws for quantile lookup.
pub fn sort_draws(mut draws: Vec<f64>) -> Vec<f64> {
    draws.sort_by(f64::total_cmp);
    draws
}

/// Simulated `λ_α`: the `(1 − α)` nearest-rank quantile of the draws.
pub fn critical_value(
    kind: DetectorKind,
    nu: usize,
    horizon: Horizon,
    shape: BoundaryShape,
    alpha: f64,
    cfg: &SimConfig,
) -> Result<f64> {
    if cfg.n_reps < 1000 {
        return Err(CusumError::InvalidConfig(format!("need at least 1000 replications, got {}", cfg.n_reps)));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(CusumError::InvalidConfig(format!("α must lie in (0, 1), got {alpha}")));
    }
    let draws = sort_draws(simulate_draws(kind, nu, horizon, shape, cfg)?);
    Ok(quantile_nearest_rank(&draws, 1.0 - alpha))
}

// ---------------------------------------------------------------------------
// Critical value tables
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalValueEntry {
    pub kind: DetectorKind,
    pub nu: usize,
    pub alpha: f64,
    pub boundary: BoundaryShape,
    pub horizon: Horizon,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalValueTable {
    pub schema_version: u32,
    pub n_grid: usize,
    pub n_reps: usize,
    pub seed: u64,
    pub entries: Vec<CriticalValueEntry>,
}

impl CriticalValueTable {
    pub fn get(&self, kind: DetectorKind, nu: usize, alpha: f64, horizon: Horizon) -> Option<f64> {
        self.entries
            .iter()
            .find(|e| e.kind == kind && e.nu == nu && (e.alpha - alpha).abs() < 1e-12 && e.horizon == horizon)
            .map(|e| e.lambda)
    }
}

/// Simulates every `(kind, ν, horizon)` combination once and reads all
/// requested `α` from the same draws.
pub fn critical_value_table(
    kinds: &[DetectorKind],
    nus: &[usize],
    alphas: &[f64],
    horizons: &[Horizon],
    shape: BoundaryShape,
    cfg: &SimConfig,
) -> Result<CriticalValueTable> {
    let mut entries = Vec::new();
    for &kind in kinds {
        for &horizon in horizons {
            for &nu in nus {
                let draws = sort_draws(simulate_draws(kind, nu, horizon, shape, cfg)?);
                for &alpha in alphas {
                    entries.push(CriticalValueEntry {
                        kind,
                        nu,
                        alpha,
                        boundary: shape,
                        horizon,
                        lambda: quantile_nearest_rank(&draws, 1.0 - alpha),
                    });
                }
            }
        }
    }
    Ok(CriticalValueTable { schema_version: TABLE_SCHEMA_VERSION, n_grid: cfg.n_grid, n_reps: cfg.n_reps, seed: cfg.seed, entries })
}

// ---------------------------------------------------------------------------
// Local power, delay, size distribution
// ---------------------------------------------------------------------------

/// Drift at path abscissa `x` for a break `spec` under `horizon`.
fn drift_for(horizon: Horizon, spec: BreakSpec) -> impl Fn(f64) -> f64 {
    let shift = if horizon == Horizon::Retrospective { 0.0 } else { 1.0 };
    move |x| h_single_break(x + shift, &spec)
}

/// Rejection rate of the drifted limit `W + h` at critical value `λ`
/// (univariate).
pub fn local_power(
    kind: DetectorKind,
    spec: &BreakSpec,
    horizon: Horizon,
    shape: BoundaryShape,
    lambda: f64,
    cfg: &SimConfig,
) -> Result<f64> {
    check_kind(kind, horizon, shape)?;
    if horizon == Horizon::Infinite {
        return Err(CusumError::InvalidConfig("local power needs a bounded horizon".into()));
    }
    let grid = LimitGrid::new(cfg.n_grid, 1, horizon)?;
    let dom = domain("power", kind, &grid, shape);
    let drift = drift_for(horizon, *spec);
    let hits = par_reps(cfg.n_reps, cfg.workers, Scratch::default, |rep, scratch| {
        let mut rng = stream(cfg.seed, dom, rep);
        fill_path(&grid, &mut rng, Some(&drift), scratch);
        functional(kind, &grid, shape, &scratch.path) >= lambda
    });
    Ok(hits.iter().filter(|&&h| h).count() as f64 / cfg.n_reps as f64)
}

/// Mean relative detection delay of a monitoring detector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelayResult {
    /// `E[T_d/T | τ* ≤ T_d/T ≤ m] − τ*`, `None` when no draw qualifies.
    pub mean_delay: Option<f64>,
    pub detections: usize,
    pub reps: usize,
}

/// Local delay of a monitoring detector up to the horizon `m`.
pub fn local_delay(
    kind: DetectorKind,
    spec: &BreakSpec,
    m: f64,
    shape: BoundaryShape,
    lambda: f64,
    cfg: &SimConfig,
) -> Result<DelayResult> {
    let horizon = Horizon::Finite(m);
    check_kind(kind, horizon, shape)?;
    if kind == DetectorKind::Backward {
        return Err(CusumError::InvalidConfig("delay is defined for monitoring detectors".into()));
    }
    if !(spec.tau_star > 1.0 && spec.tau_star < m) {
        return Err(CusumError::InvalidConfig(format!("τ* must lie in (1, {m}), got {}", spec.tau_star)));
    }
    let grid = LimitGrid::new(cfg.n_grid, 1, horizon)?;
    let dom = domain("delay", kind, &grid, shape);
    let drift = drift_for(horizon, *spec);
    let locs = par_reps(cfg.n_reps, cfg.workers, Scratch::default, |rep, scratch| {
        let mut rng = stream(cfg.seed, dom, rep);
        fill_path(&grid, &mut rng, Some(&drift), scratch);
        first_crossing(kind, &grid, shape, lambda, &scratch.path).map(|i| grid.location(i))
    });
    let hits: Vec<f64> = locs.into_iter().flatten().filter(|&l| l >= spec.tau_star).collect();
    let mean_delay = (!hits.is_empty()).then(|| hits.iter().sum::<f64>() / hits.len() as f64 - spec.tau_star);
    Ok(DelayResult { mean_delay, detections: hits.len(), reps: cfg.n_reps })
}

/// Histogram of first-crossing locations under the null, conditional on
/// rejection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeDistribution {
    /// Bin edges, `bins + 1` values.
    pub edges: Vec<f64>,
    /// Relative frequencies summing to one (all zero without rejections).
    pub mass: Vec<f64>,
    pub rejections: usize,
    pub reps: usize,
}

impl SizeDistribution {
    pub fn centers(&self) -> Vec<f64> {
        self.edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    /// Center of the heaviest bin.
    pub fn mode(&self) -> f64 {
        let (j, _) = self.mass.iter().enumerate().fold((0, f64::NEG_INFINITY), |b, (j, &m)| if m > b.1 { (j, m) } else { b });
        self.centers()[j]
    }

    /// First Wasserstein distance to another histogram on the same edges.
    pub fn wasserstein(&self, other: &SizeDistribution) -> f64 {
        let mut cdf = 0.0;
        let mut dist = 0.0;
        for (j, w) in self.edges.windows(2).enumerate() {
            cdf += self.mass[j] - other.mass[j];
            dist += cdf.abs() * (w[1] - w[0]);
        }
        dist
    }

    /// Mirror image on `[lo, hi]`: bin `j` swaps with bin `bins − 1 − j`.
    pub fn reflected(&self) -> SizeDistribution {
        let mut mass = self.mass.clone();
        mass.reverse();
        SizeDistribution { mass, ..self.clone() }
    }
}

/// Null size distribution of a retrospective or finite-horizon detector over
/// `bins` equal bins. Backward crossings are located at `1 − span`.
pub fn size_distribution(
    kind: DetectorKind,
    horizon: Horizon,
    shape: BoundaryShape,
    lambda: f64,
    bins: usize,
    cfg: &SimConfig,
) -> Result<SizeDistribution> {
    check_kind(kind, horizon, shape)?;
    if horizon == Horizon::Infinite || bins == 0 {
        return Err(CusumError::InvalidConfig("size distribution needs a bounded horizon and bins > 0".into()));
    }
    let grid = LimitGrid::new(cfg.n_grid, 1, horizon)?;
    let dom = domain("size", kind, &grid, shape);
    let locs = par_reps(cfg.n_reps, cfg.workers, Scratch::default, |rep, scratch| {
        let mut rng = stream(cfg.seed, dom, rep);
        fill_path(&grid, &mut rng, None, scratch);
        first_crossing(kind, &grid, shape, lambda, &scratch.path).map(|i| match kind {
            DetectorKind::Backward => 1.0 - grid.location(i),
            _ => grid.location(i),
        })
    });
    let (lo, hi) = match horizon {
        Horizon::Finite(m) => (1.0, m),
        _ => (0.0, 1.0),
    };
    let width = (hi - lo) / bins as f64;
    let edges: Vec<f64> = (0..=bins).map(|j| lo + j as f64 * width).collect();
    let mut counts = vec![0usize; bins];
    let mut rejections = 0;
    for l in locs.into_iter().flatten() {
        let j = (((l - lo) / width).floor().max(0.0) as usize).min(bins - 1);
        counts[j] += 1;
        rejections += 1;
    }
    let mass = counts.iter().map(|&c| if rejections > 0 { c as f64 / rejections as f64 } else { 0.0 }).collect();
    Ok(SizeDistribution { edges, mass, rejections, reps: cfg.n_reps })
}

/// Plot-ready `(abscissa, value)` series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

/// Local power as a function of `c/σ` at a fixed `τ*`.
pub fn power_curve(
    kind: DetectorKind,
    tau_star: f64,
    c_values: &[f64],
    lambda: f64,
    cfg: &SimConfig,
) -> Result<Curve> {
    let points = c_values
        .iter()
        .map(|&c| Ok((c, local_power(kind, &BreakSpec::new(c, tau_star)?, Horizon::Retrospective, BoundaryShape::Linear, lambda, cfg)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(Curve { label: format!("{kind} power, tau*={tau_star}"), points })
}

/// Local mean delay as a function of `c/σ` at a fixed `τ*` and horizon `m`.
pub fn delay_curve(
    kind: DetectorKind,
    shape: BoundaryShape,
    tau_star: f64,
    m: f64,
    c_values: &[f64],
    lambda: f64,
    cfg: &SimConfig,
) -> Result<Curve> {
    let mut points = Vec::new();
    for &c in c_values {
        let d = local_delay(kind, &BreakSpec::new(c, tau_star)?, m, shape, lambda, cfg)?;
        if let Some(v) = d.mean_delay {
            points.push((c, v));
        }
    }
    Ok(Curve { label: format!("{kind} delay, tau*={tau_star}, m={m}"), points })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, eps: f64, depth: u32) -> f64 {
        let c = 0.5 * (a + b);
        let whole = (b - a) / 6.0 * (f(a) + 4.0 * f(c) + f(b));
        let left = (c - a) / 6.0 * (f(a) + 4.0 * f(0.5 * (a + c)) + f(c));
        let right = (b - c) / 6.0 * (f(c) + 4.0 * f(0.5 * (c + b)) + f(b));
        if depth == 0 || (left + right - whole).abs() < 15.0 * eps {
            left + right + (left + right - whole) / 15.0
        } else {
            simpson(f, a, c, eps / 2.0, depth - 1) + simpson(f, c, b, eps / 2.0, depth - 1)
        }
    }

    /// Quadrature of both integrals, splitting at the knots.
    fn h_quadrature(r: f64, g: &StepFunction) -> f64 {
        let mut pts: Vec<f64> = g.knots.iter().copied().filter(|&k| k < r).collect();
        pts.push(r);
        let integrate = |f: &dyn Fn(f64) -> f64, hi: f64| -> f64 {
            let mut s = 0.0;
            let mut a = 0.0;
            for &b in pts.iter().filter(|&&p| p <= hi).chain(std::iter::once(&hi)) {
                if b > a {
                    s += simpson(&f, a, b, 1e-13, 40);
                    a = b;
                }
            }
            s
        };
        let big_g = |z: f64| integrate(&|v| g.eval(v), z);
        integrate(&|z| g.eval(z), r) - integrate(&|z| if z > 0.0 { big_g(z) / z } else { 0.0 }, r)
    }

    #[test]
    fn h_single_break_values() {
        let spec = BreakSpec::new(1.0, 0.5).unwrap();
        assert_eq!(h_single_break(0.3, &spec), 0.0);
        assert_eq!(h_single_break(0.5, &spec), 0.0);
        assert!((h_single_break(1.0, &spec) - 0.5 * 2f64.ln()).abs() < 1e-15);
        assert!((h_single_break(1.0, &spec) - 0.34657).abs() < 1e-5);
    }

    #[test]
    fn h_general_specializations() {
        let flat = StepFunction::new(vec![0.0], vec![2.5]).unwrap();
        for r in [0.1, 0.7, 3.0] {
            assert!(h_general(r, &flat).abs() < 1e-15);
        }
        let spec = BreakSpec::new(1.7, 0.35).unwrap();
        let g = StepFunction::single_break(&spec);
        for r in [0.1, 0.35, 0.5, 0.99, 2.0] {
            assert!((h_general(r, &g) - h_single_break(r, &spec)).abs() < 1e-12);
        }
    }

    #[test]
    fn h_general_matches_quadrature() {
        let g = StepFunction::new(vec![0.0, 0.3, 0.6], vec![0.5, 1.5, -0.4]).unwrap();
        for r in [0.2, 0.45, 0.8, 1.0] {
            let exact = h_general(r, &g);
            let quad = h_quadrature(r, &g);
            assert!((exact - quad).abs() < 1e-8, "r={r}: {exact} vs {quad}");
        }
    }

    #[test]
    fn bridge_grid_identity() {
        // |V_b − V_a|/(1 + 2(u_b − u_a)) against the bridge form with d((r−s)/((1−r)(1−s))).
        let n = 50usize;
        let grid = LimitGrid::new(n, 1, Horizon::Infinite).unwrap();
        let mut scratch = Scratch::default();
        let mut rng = stream(3, 9, 0);
        fill_path(&grid, &mut rng, None, &mut scratch);
        let v = scratch.path.clone();
        let mut w = vec![0.0; n + 1];
        let mut rng = stream(3, 9, 0);
        for i in 1..=n {
            let z: f64 = rng.sample(StandardNormal);
            w[i] = w[i - 1] + z / (n as f64).sqrt();
        }
        let mut brute = 0.0_f64;
        for b in 1..n {
            for a in 0..b {
                let (rb, ra) = (b as f64 / n as f64, a as f64 / n as f64);
                let bb = w[b] - rb * w[n];
                let ba = w[a] - ra * w[n];
                let num = (bb * (1.0 - ra) - ba * (1.0 - rb)).abs();
                let den = (1.0 - rb) * (1.0 - ra) * (1.0 + 2.0 * (rb - ra) / ((1.0 - rb) * (1.0 - ra)));
                brute = brute.max(num / den);
            }
        }
        let fast = functional(DetectorKind::Stacked, &grid, BoundaryShape::Linear, &v);
        assert!((fast - brute).abs() < 1e-10, "{fast} vs {brute}");
    }

    #[test]
    fn single_step_forward_is_folded_normal() {
        let cfg = SimConfig { n_grid: 1, n_reps: 100_000, seed: 5, workers: None };
        let draws = simulate_draws(DetectorKind::Forward, 1, Horizon::Retrospective, BoundaryShape::Linear, &cfg).unwrap();
        // |Z|/3: P(|Z| ≤ 3x) = 2Φ(3x) − 1; check at the folded-normal quartiles.
        for (p, z) in [(0.25, 0.318_639_363_964_375), (0.5, 0.674_489_750_196_082), (0.75, 1.150_349_380_376_008)] {
            let frac = draws.iter().filter(|&&d| d * 3.0 <= z).count() as f64 / draws.len() as f64;
            let se = (p * (1.0 - p) / draws.len() as f64).sqrt();
            assert!((frac - p).abs() < 4.0 * se, "p={p}: {frac}");
        }
    }

    #[test]
    fn stacked_dominates_forward_on_same_path() {
        let grid = LimitGrid::new(300, 2, Horizon::Retrospective).unwrap();
        let mut scratch = Scratch::default();
        for rep in 0..50 {
            let mut rng = stream(1, 2, rep);
            fill_path(&grid, &mut rng, None, &mut scratch);
            let f = functional(DetectorKind::Forward, &grid, BoundaryShape::Linear, &scratch.path);
            let b = functional(DetectorKind::Backward, &grid, BoundaryShape::Linear, &scratch.path);
            let s = functional(DetectorKind::Stacked, &grid, BoundaryShape::Linear, &scratch.path);
            assert!(s >= f - 1e-12 && s >= b - 1e-12);
        }
    }

    #[test]
    fn quantile_rule() {
        let xs: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(quantile_nearest_rank(&xs, 0.95), 95.0);
        assert_eq!(quantile_nearest_rank(&xs, 0.951), 96.0);
        assert_eq!(quantile_nearest_rank(&xs, 0.0), 1.0);
        assert_eq!(quantile_nearest_rank(&xs, 1.0), 100.0);
    }

    #[test]
    fn invalid_combinations() {
        let cfg = SimConfig { n_grid: 10, n_reps: 1000, seed: 0, workers: None };
        let lin = BoundaryShape::Linear;
        assert!(simulate_draws(DetectorKind::Backward, 1, Horizon::Infinite, lin, &cfg).is_err());
        let rad = BoundaryShape::Radical { alpha: 0.05 };
        assert!(simulate_draws(DetectorKind::Stacked, 1, Horizon::Infinite, rad, &cfg).is_err());
        assert!(critical_value(DetectorKind::Forward, 1, Horizon::Retrospective, lin, 0.05, &SimConfig { n_reps: 10, ..cfg }).is_err());
    }

    #[test]
    fn increments_have_step_variance() {
        let grid = LimitGrid::new(40, 1, Horizon::Finite(2.5)).unwrap();
        assert_eq!(grid.steps(), 60);
        let mut scratch = Scratch::default();
        let (mut s, mut n) = (0.0, 0usize);
        for rep in 0..400 {
            let mut rng = stream(2, 4, rep);
            fill_path(&grid, &mut rng, None, &mut scratch);
            for w in scratch.path.windows(2) {
                s += (w[1] - w[0]).powi(2);
                n += 1;
            }
        }
        let var = s / n as f64;
        assert!((var * 40.0 - 1.0).abs() < 0.03, "{var}");
    }
}
