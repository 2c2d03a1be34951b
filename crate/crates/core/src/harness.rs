//! Finite-sample experiments: empirical size, size-adjusted power, detection
//! delay and break-date accuracy of the detectors on simulated data.

use std::time::Instant;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::breakpoint::{estimate_break_bq, estimate_break_ml, prefix_rss, suffix_rss, BreakContext};
use crate::detectors::{cusum_path, BoundaryShape, CusumPath, DetectorKind, Horizon};
use crate::error::{CusumError, Result};
use crate::limit_sim::{
    delay_curve, local_power, quantile_nearest_rank, simulate_draws, size_distribution, sort_draws, BreakSpec, Curve,
    SimConfig,
};
use crate::monitor::monitoring_path;
use crate::regression::{fit_history, Dataset};
use crate::rng::{domain_tag, par_reps, stream, McRng};
use crate::scan::{stacked_first_crossing, stacked_sup};
use crate::tables;

/// Version of the serialized [`ExperimentReport`] layout.
pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Default trimming of the sup-Wald test.
pub const SUP_WALD_TRIM: f64 = 0.15;

/// Asymptotic sup-Wald critical values for trimming 0.15, rows `k = 1..=4`,
/// columns `α = 10%, 5%, 1%` (Andrews, 1993, Econometrica 61(4), Table 1).
pub const SUP_WALD_CRIT: [[f64; 3]; 4] =
    [[7.17, 8.68, 12.16], [10.01, 11.72, 15.56], [12.27, 14.05, 17.98], [14.34, 16.12, 20.32]];

// ---------------------------------------------------------------------------
// Data-generating processes
// ---------------------------------------------------------------------------

/// Simulated model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "type")]
pub enum Model {
    /// `y_t = 2 + δ·1{t > τ*T} + u_t`.
    MeanShift,
    /// `y_t = 2 + (1 + δ·1{t > τ*T}) x_t + u_t`.
    SlopeShift,
    /// `y_t = u_t` with an intercept and `k − 1` standard normal regressors.
    Null { k: usize },
}

impl Model {
    pub fn k(&self) -> usize {
        match *self {
            Model::MeanShift => 1,
            Model::SlopeShift => 2,
            Model::Null { k } => k,
        }
    }
}

/// One simulated design: `n` observations of `model`, history length `T`,
/// and a break of size `shift` at relative location `τ*` (in units of `T`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    pub model: Model,
    pub t_hist: usize,
    pub n: usize,
    pub tau_star: Option<f64>,
    pub shift: f64,
}

impl DgpSpec {
    /// Retrospective sample of length `T` without a break.
    pub fn null(model: Model, t_hist: usize) -> Self {
        DgpSpec { model, t_hist, n: t_hist, tau_star: None, shift: 0.0 }
    }

    pub fn with_break(mut self, tau_star: f64, shift: f64) -> Self {
        self.tau_star = Some(tau_star);
        self.shift = shift;
        self
    }

    /// Monitoring up to `⌊mT⌋`.
    pub fn with_horizon(mut self, m: f64) -> Self {
        self.n = (m * self.t_hist as f64 + 1e-9).floor() as usize;
        self
    }

    /// First observation `T* = ⌊τ*T⌋ + 1` of the post-break regime.
    pub fn break_index(&self) -> Option<usize> {
        self.tau_star.map(|tau| (tau * self.t_hist as f64 + 1e-9).floor() as usize + 1)
    }

    /// Draws one dataset.
    pub fn generate(&self, rng: &mut McRng) -> Result<Dataset> {
        let k = self.model.k();
        let tb = self.break_index().unwrap_or(usize::MAX);
        let mut y = Vec::with_capacity(self.n);
        let mut x = Vec::with_capacity(self.n * k);
        for t in 1..=self.n {
            let after = if t >= tb { self.shift } else { 0.0 };
            x.push(1.0);
            let mut extra = [0.0_f64; 8];
            for e in extra.iter_mut().take(k - 1) {
                *e = rng.sample(StandardNormal);
            }
            x.extend_from_slice(&extra[..k - 1]);
            let u: f64 = rng.sample(StandardNormal);
            y.push(match self.model {
                Model::MeanShift => 2.0 + after + u,
                Model::SlopeShift => 2.0 + (1.0 + after) * extra[0] + u,
                Model::Null { .. } => u,
            });
        }
        Dataset::new(y, x, k)
    }
}

// ---------------------------------------------------------------------------
// Sup-Wald
// ---------------------------------------------------------------------------

/// `max_t (T − 2k)(S₀ − S₁(t) − S₂(t))/(S₁(t) + S₂(t))` over
/// `⌈r₀T⌉ ≤ t ≤ ⌊(1 − r₀)T⌋`, where `S₁` fits `1..t` and `S₂` fits `t+1..T`.
pub fn sup_wald(data: &Dataset, r0: f64) -> Result<f64> {
    let (t_len, k) = (data.len(), data.k());
    if !(r0 > 0.0 && r0 < 0.5) {
        return Err(CusumError::InvalidConfig(format!("trimming must lie in (0, 0.5), got {r0}")));
    }
    let lo = (r0 * t_len as f64 - 1e-9).ceil() as usize;
    let hi = ((1.0 - r0) * t_len as f64 + 1e-9).floor() as usize;
    if lo < k + 1 || t_len < hi + k + 1 || lo > hi {
        return Err(CusumError::EmptyRange(format!("trimming {r0} leaves no admissible split for T = {t_len}, k = {k}")));
    }
    let pre = prefix_rss(data);
    let post = suffix_rss(data);
    let s0 = pre[t_len].ok_or(CusumError::RankDeficient)?;
    let dof = (t_len - 2 * k) as f64;
    let mut best = f64::NEG_INFINITY;
    for t in lo..=hi {
        let (s1, s2) = (pre[t].ok_or(CusumError::RankDeficient)?, post[t].ok_or(CusumError::RankDeficient)?);
        best = best.max(dof * (s0 - s1 - s2) / (s1 + s2));
    }
    Ok(best)
}

/// Tabulated sup-Wald critical value for trimming 0.15.
pub fn sup_wald_critical_value(k: usize, alpha: f64) -> Result<f64> {
    let col = [0.10, 0.05, 0.01].iter().position(|a| (a - alpha).abs() < 1e-9);
    match (col, k) {
        (Some(j), 1..=4) => Ok(SUP_WALD_CRIT[k - 1][j]),
        _ => Err(CusumError::UnknownCriticalValue(format!("sup-Wald, k = {k}, α = {alpha}"))),
    }
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

/// Provenance of a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub seed: u64,
    pub reps: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub null_reps: Option<usize>,
    /// Grid points per unit length of the limiting-process simulation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_grid: Option<usize>,
    pub crate_version: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub build: Option<String>,
    pub runtime_secs: f64,
}

/// One estimate with its Monte Carlo standard error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub row: String,
    pub column: String,
    pub estimate: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub schema_version: u32,
    pub table: String,
    pub title: String,
    pub metadata: Metadata,
    pub cells: Vec<Cell>,
}

impl ExperimentReport {
    fn new(table: &str, title: &str, cfg: &ExperimentConfig, null_reps: Option<usize>, started: Instant) -> Self {
        ExperimentReport {
            schema_version: REPORT_SCHEMA_VERSION,
            table: table.into(),
            title: title.into(),
            metadata: Metadata {
                seed: cfg.seed,
                reps: cfg.reps,
                null_reps,
                n_grid: None,
                crate_version: env!("CARGO_PKG_VERSION").into(),
                build: None,
                runtime_secs: started.elapsed().as_secs_f64(),
            },
            cells: Vec::new(),
        }
    }

    fn push(&mut self, row: impl Into<String>, column: impl Into<String>, estimate: f64, std_error: f64) {
        self.cells.push(Cell { row: row.into(), column: column.into(), estimate, std_error });
    }

    pub fn get(&self, row: &str, column: &str) -> Option<&Cell> {
        self.cells.iter().find(|c| c.row == row && c.column == column)
    }
}

/// Replication budget of an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub reps: usize,
    /// Replications of the companion null run used for size adjustment.
    pub null_reps: usize,
    pub seed: u64,
    #[serde(skip)]
    pub workers: Option<usize>,
}

impl ExperimentConfig {
    /// 20,000 replications.
    pub fn desk(seed: u64) -> Self {
        ExperimentConfig { reps: 20_000, null_reps: 20_000, seed, workers: None }
    }

    /// 100,000 replications.
    pub fn paper(seed: u64) -> Self {
        ExperimentConfig { reps: 100_000, null_reps: 100_000, seed, workers: None }
    }
}

/// Rate in percent with its binomial standard error.
fn rate_pct(hits: usize, reps: usize) -> (f64, f64) {
    let p = hits as f64 / reps as f64;
    (100.0 * p, 100.0 * (p * (1.0 - p) / reps as f64).sqrt())
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (m, (v / n).sqrt())
}

fn fmt_num(v: f64) -> String {
    format!("{v}")
}

/// Nearest-rank quantile with an order-statistic standard error: half the
/// spread between the quantiles at `p ± √(p(1 − p)/n)`.
pub fn quantile_with_se(sorted: &[f64], p: f64) -> (f64, f64) {
    let s = (p * (1.0 - p) / sorted.len() as f64).sqrt();
    let lo = quantile_nearest_rank(sorted, (p - s).max(0.0));
    let hi = quantile_nearest_rank(sorted, (p + s).min(1.0));
    (quantile_nearest_rank(sorted, p), 0.5 * (hi - lo))
}

/// Simulated critical values `λ_α` under the linear boundary, one row per `ν`
/// and one column per `(kind, horizon, α)`.
pub fn run_critical_value_table(
    table: &str,
    kinds: &[DetectorKind],
    nus: &[usize],
    alphas: &[f64],
    horizons: &[Horizon],
    sim: &SimConfig,
) -> Result<ExperimentReport> {
    let started = Instant::now();
    let cfg = ExperimentConfig { reps: sim.n_reps, null_reps: 0, seed: sim.seed, workers: sim.workers };
    let mut report = ExperimentReport::new(table, "Simulated critical values, linear boundary", &cfg, None, started);
    report.metadata.n_grid = Some(sim.n_grid);
    for &kind in kinds {
        for &horizon in horizons {
            for &nu in nus {
                let draws = sort_draws(simulate_draws(kind, nu, horizon, BoundaryShape::Linear, sim)?);
                for &alpha in alphas {
                    let (q, se) = quantile_with_se(&draws, 1.0 - alpha);
                    report.push(format!("nu={nu}"), format!("{kind}/{horizon}/{}", fmt_num(alpha)), q, se);
                }
            }
        }
    }
    report.metadata.runtime_secs = started.elapsed().as_secs_f64();
    Ok(report)
}

// ---------------------------------------------------------------------------
// Retrospective statistics
// ---------------------------------------------------------------------------

/// λ-free retrospective statistics `[Q, BQ, SBQ]` of a path.
fn retro_stats(path: &CusumPath) -> [f64; 3] {
    let n = path.len();
    let t = n as f64;
    let d = |span: usize| 1.0 + 2.0 * span as f64 / t;
    let mut q = 0.0_f64;
    let mut bq = 0.0_f64;
    for i in 1..=n {
        q = q.max(path.diff_norm(i, 0) / d(i));
        bq = bq.max(path.diff_norm(n, i - 1) / d(n - i + 1));
    }
    let sbq = stacked_sup(path.as_slice(), path.nu(), 0, |i| i as f64 / t).value;
    [q, bq, sbq]
}

fn retro_path(data: &Dataset) -> Result<CusumPath> {
    Ok(cusum_path(&fit_history(data)?))
}

const RETRO_NAMES: [&str; 3] = ["Q", "BQ", "SBQ"];

/// Empirical size of the retrospective tests at `α = 5%` for each `(k, T)`.
pub fn run_size_table(ks: &[usize], ts: &[usize], cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let started = Instant::now();
    let mut report = ExperimentReport::new("3", "Empirical size of the retrospective tests (%)", cfg, None, started);
    for &k in ks {
        let lambdas = [
            tables::lookup(DetectorKind::Forward, k, 0.05, Horizon::Retrospective)?,
            tables::lookup(DetectorKind::Backward, k, 0.05, Horizon::Retrospective)?,
            tables::lookup(DetectorKind::Stacked, k, 0.05, Horizon::Retrospective)?,
        ];
        for &t_len in ts {
            let spec = DgpSpec::null(Model::Null { k }, t_len);
            let dom = domain_tag(&format!("size/{k}/{t_len}"));
            let stats = par_reps(cfg.reps, cfg.workers, || (), |rep, _| -> Result<[f64; 3]> {
                let data = spec.generate(&mut stream(cfg.seed, dom, rep))?;
                Ok(retro_stats(&retro_path(&data)?))
            })
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
            for (j, name) in RETRO_NAMES.iter().enumerate() {
                let hits = stats.iter().filter(|s| s[j] >= lambdas[j]).count();
                let (p, se) = rate_pct(hits, cfg.reps);
                report.push(*name, format!("k={k},T={t_len}"), p, se);
            }
        }
    }
    report.metadata.runtime_secs = started.elapsed().as_secs_f64();
    Ok(report)
}

/// Size-adjusted power of `Q`, `BQ`, `SBQ` and sup-Wald under `model`.
pub fn run_power_table(models: &[Model], t_len: usize, taus: &[f64], shift: f64, cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let started = Instant::now();
    let mut report =
        ExperimentReport::new("4", "Size-adjusted power of the retrospective tests (%)", cfg, Some(cfg.null_reps), started);
    let names = ["Q", "BQ", "SBQ", "supW"];
    for &model in models {
        let all_stats = |spec: DgpSpec, dom: u64, reps: usize| -> Result<Vec<[f64; 4]>> {
            par_reps(reps, cfg.workers, || (), |rep, _| -> Result<[f64; 4]> {
                let data = spec.generate(&mut stream(cfg.seed, dom, rep))?;
                let [q, bq, sbq] = retro_stats(&retro_path(&data)?);
                Ok([q, bq, sbq, sup_wald(&data, SUP_WALD_TRIM)?])
            })
            .into_iter()
            .collect()
        };
        let label = model_label(model);
        let null = all_stats(DgpSpec::null(model, t_len), domain_tag(&format!("power-null/{label}/{t_len}")), cfg.null_reps)?;
        let lambdas: Vec<f64> = (0..4)
            .map(|j| quantile_nearest_rank(&sort_draws(null.iter().map(|s| s[j]).collect()), 0.95))
            .collect();
        let dom = domain_tag(&format!("power-alt/{label}/{t_len}"));
        for &tau in taus {
            let stats = all_stats(DgpSpec::null(model, t_len).with_break(tau, shift), dom, cfg.reps)?;
            for (j, name) in names.iter().enumerate() {
                let hits = stats.iter().filter(|s| s[j] >= lambdas[j]).count();
                let (p, se) = rate_pct(hits, cfg.reps);
                report.push(format!("tau={}", fmt_num(tau)), format!("{label}/{name}"), p, se);
            }
        }
    }
    report.metadata.runtime_secs = started.elapsed().as_secs_f64();
    Ok(report)
}

fn model_label(model: Model) -> String {
    match model {
        Model::MeanShift => "mean".into(),
        Model::SlopeShift => "slope".into(),
        Model::Null { k } => format!("null{k}"),
    }
}

// ---------------------------------------------------------------------------
// Monitoring
// ---------------------------------------------------------------------------

/// Monitoring detectors compared in the experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MonitorDetector {
    /// Stacked backward, linear boundary.
    Sbq,
    /// Forward, linear boundary.
    Q,
    /// Forward, radical boundary at 5%.
    Csw,
}

impl MonitorDetector {
    pub fn name(self) -> &'static str {
        match self {
            MonitorDetector::Sbq => "SBQ",
            MonitorDetector::Q => "Q",
            MonitorDetector::Csw => "CSW",
        }
    }

    fn shape(self) -> BoundaryShape {
        match self {
            MonitorDetector::Csw => BoundaryShape::Radical { alpha: 0.05 },
            _ => BoundaryShape::Linear,
        }
    }

    /// Nominal `λ` for an open-ended horizon at 5%.
    pub fn nominal_lambda(self, nu: usize) -> Result<f64> {
        match self {
            MonitorDetector::Sbq => tables::lookup(DetectorKind::Stacked, nu, 0.05, Horizon::Infinite),
            MonitorDetector::Q => tables::lookup(DetectorKind::Forward, nu, 0.05, Horizon::Infinite),
            MonitorDetector::Csw if nu == 1 => Ok(1.0),
            MonitorDetector::Csw => Err(CusumError::InvalidConfig("the radical boundary is univariate".into())),
        }
    }

    /// `max` of the λ-free statistic over the whole path `z` (`ν = 1` for CSW).
    pub fn max_statistic(self, z: &[f64], nu: usize, t_hist: usize) -> f64 {
        let t = t_hist as f64;
        let n = z.len() / nu - 1;
        match self {
            MonitorDetector::Sbq => stacked_sup(z, nu, 0, |i| i as f64 / t).value,
            _ => {
                let shape = self.shape();
                (1..=n)
                    .map(|i| (0..nu).map(|c| (z[i * nu + c] - z[c]).abs()).fold(0.0, f64::max) / shape.d(i as f64 / t))
                    .fold(0.0, f64::max)
            }
        }
    }

    /// Path index (`t − T`) of the first crossing of `λ d`.
    pub fn first_crossing(self, z: &[f64], nu: usize, t_hist: usize, lambda: f64) -> Option<usize> {
        let t = t_hist as f64;
        let n = z.len() / nu - 1;
        match self {
            MonitorDetector::Sbq => stacked_first_crossing(z, nu, 0, |i| i as f64 / t, lambda).map(|(b, _)| b),
            _ => {
                let shape = self.shape();
                (1..=n).find(|&i| {
                    (0..nu).map(|c| (z[i * nu + c] - z[c]).abs()).fold(0.0, f64::max) >= lambda * shape.d(i as f64 / t)
                })
            }
        }
    }
}

/// Empirical size of the open-ended monitoring detectors truncated at each
/// `m`, using the nominal `λ`.
pub fn run_monitor_size_table(
    ks: &[usize],
    ts: &[usize],
    ms: &[f64],
    cfg: &ExperimentConfig,
) -> Result<ExperimentReport> {
    let started = Instant::now();
    let mut report = ExperimentReport::new("5", "Empirical size of open-ended monitoring (%)", cfg, None, started);
    let m_max = ms.iter().copied().fold(1.0, f64::max);
    for &k in ks {
        let dets: Vec<MonitorDetector> = if k == 1 {
            vec![MonitorDetector::Sbq, MonitorDetector::Q, MonitorDetector::Csw]
        } else {
            vec![MonitorDetector::Sbq, MonitorDetector::Q]
        };
        let lambdas = dets.iter().map(|d| d.nominal_lambda(k)).collect::<Result<Vec<_>>>()?;
        for &t_len in ts {
            let spec = DgpSpec::null(Model::Null { k }, t_len).with_horizon(m_max);
            let dom = domain_tag(&format!("monsize/{k}/{t_len}"));
            let crossings = par_reps(cfg.reps, cfg.workers, || (), |rep, _| -> Result<Vec<Option<usize>>> {
                let data = spec.generate(&mut stream(cfg.seed, dom, rep))?;
                let z = monitoring_path(&data, t_len, None)?;
                Ok(dets.iter().zip(&lambdas).map(|(d, &l)| d.first_crossing(&z, k, t_len, l)).collect())
            })
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
            for &m in ms {
                let end = (m * t_len as f64 + 1e-9).floor() as usize - t_len;
                for (j, d) in dets.iter().enumerate() {
                    let hits = crossings.iter().filter(|c| c[j].is_some_and(|i| i <= end)).count();
                    let (p, se) = rate_pct(hits, cfg.reps);
                    report.push(format!("m={}", fmt_num(m)), format!("k={k},T={t_len}/{}", d.name()), p, se);
                }
            }
        }
    }
    report.metadata.runtime_secs = started.elapsed().as_secs_f64();
    Ok(report)
}

/// Size-adjusted `λ` of a monitoring detector: the 95% nearest-rank quantile
/// of its maximum statistic over `(T, ⌊mT⌋]` under the null.
pub fn size_adjusted_lambda(
    det: MonitorDetector,
    model: Model,
    t_len: usize,
    m: f64,
    cfg: &ExperimentConfig,
) -> Result<f64> {
    let spec = DgpSpec::null(model, t_len).with_horizon(m);
    let nu = model.k();
    let dom = domain_tag(&format!("delay-null/{}/{}/{t_len}/{m}", model_label(model), det.name()));
    let stats = par_reps(cfg.null_reps, cfg.workers, || (), |rep, _| -> Result<f64> {
        let data = spec.generate(&mut stream(cfg.seed, dom, rep))?;
        Ok(det.max_statistic(&monitoring_path(&data, t_len, None)?, nu, t_len))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(quantile_nearest_rank(&sort_draws(stats), 0.95))
}

/// Mean detection delay `T_d − T*` over runs detecting in `[T*, ⌊mT⌋]`, at
/// size-adjusted 5% critical values.
pub fn run_delay_table(
    models: &[Model],
    t_len: usize,
    m: f64,
    taus: &[f64],
    shift: f64,
    cfg: &ExperimentConfig,
) -> Result<ExperimentReport> {
    let started = Instant::now();
    let mut report =
        ExperimentReport::new("6", "Mean detection delay of monitoring detectors", cfg, Some(cfg.null_reps), started);
    for &model in models {
        let dets: Vec<MonitorDetector> = if model.k() == 1 {
            vec![MonitorDetector::Sbq, MonitorDetector::Q, MonitorDetector::Csw]
        } else {
            vec![MonitorDetector::Sbq, MonitorDetector::Q]
        };
        let lambdas = dets.iter().map(|&d| size_adjusted_lambda(d, model, t_len, m, cfg)).collect::<Result<Vec<_>>>()?;
        let nu = model.k();
        let label = model_label(model);
        for &tau in taus {
            let spec = DgpSpec::null(model, t_len).with_horizon(m).with_break(tau, shift);
            let tb = spec.break_index().expect("break set");
            let dom = domain_tag(&format!("delay-alt/{label}/{t_len}/{m}/{tau}"));
            let crossings = par_reps(cfg.reps, cfg.workers, || (), |rep, _| -> Result<Vec<Option<usize>>> {
                let data = spec.generate(&mut stream(cfg.seed, dom, rep))?;
                let z = monitoring_path(&data, t_len, None)?;
                Ok(dets.iter().zip(&lambdas).map(|(d, &l)| d.first_crossing(&z, nu, t_len, l).map(|i| i + t_len)).collect())
            })
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
            for (j, d) in dets.iter().enumerate() {
                let delays: Vec<f64> =
                    crossings.iter().filter_map(|c| c[j]).filter(|&td| td >= tb).map(|td| (td - tb) as f64).collect();
                let row = format!("tau={}", fmt_num(tau));
                if !delays.is_empty() {
                    let (mean, se) = mean_se(&delays);
                    report.push(row.clone(), format!("{label}/{}", d.name()), mean, se);
                }
                let (p, pse) = rate_pct(delays.len(), cfg.reps);
                report.push(row, format!("{label}/{}/detected%", d.name()), p, pse);
            }
        }
    }
    report.metadata.runtime_secs = started.elapsed().as_secs_f64();
    Ok(report)
}

// ---------------------------------------------------------------------------
// Break dates
// ---------------------------------------------------------------------------

/// Sample sizes and shift sizes of the break-date experiment.
pub const BREAK_TABLE_DESIGNS: [(usize, f64); 2] = [(100, 0.8), (200, 1.0)];

/// Bias and MSE of `τ̂` for the likelihood and backward estimators under the
/// mean-shift model, for each `(T, δ)` in `designs`.
pub fn run_break_table(designs: &[(usize, f64)], taus: &[f64], cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let started = Instant::now();
    let mut report = ExperimentReport::new("7", "Bias and MSE of break-date estimators", cfg, None, started);
    for &(t_len, shift) in designs {
        for &tau in taus {
            let spec = DgpSpec::null(Model::MeanShift, t_len).with_break(tau, shift);
            let dom = domain_tag(&format!("break/{t_len}/{shift}/{tau}"));
            let est = par_reps(cfg.reps, cfg.workers, || (), |rep, _| -> Result<[f64; 2]> {
                let data = spec.generate(&mut stream(cfg.seed, dom, rep))?;
                let ml = estimate_break_ml(&data, BreakContext::Retrospective)?;
                let bq = estimate_break_bq(&fit_history(&data)?, BreakContext::Retrospective)?;
                Ok([ml.tau_hat - tau, bq.tau_hat - tau])
            })
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
            let row = format!("tau={}", fmt_num(tau));
            for (j, name) in ["ML", "BQ"].iter().enumerate() {
                let err: Vec<f64> = est.iter().map(|e| e[j]).collect();
                let sq: Vec<f64> = err.iter().map(|e| e * e).collect();
                let (bias, bse) = mean_se(&err);
                let (mse, mse_se) = mean_se(&sq);
                report.push(row.clone(), format!("T={t_len}/bias/{name}"), bias, bse);
                report.push(row.clone(), format!("T={t_len}/mse/{name}"), mse, mse_se);
            }
        }
    }
    report.metadata.runtime_secs = started.elapsed().as_secs_f64();
    Ok(report)
}

// ---------------------------------------------------------------------------
// Local-limit curves
// ---------------------------------------------------------------------------

/// Local power of the retrospective detectors at 5%: against `c/σ` for each
/// `τ*` in `taus`, and against `τ*` in `tau_grid` at `c/σ = c_fixed`.
pub fn power_figure(
    taus: &[f64],
    c_values: &[f64],
    c_fixed: f64,
    tau_grid: &[f64],
    sim: &SimConfig,
) -> Result<Vec<Curve>> {
    let kinds = [DetectorKind::Forward, DetectorKind::Backward, DetectorKind::Stacked];
    let mut curves = Vec::new();
    for kind in kinds {
        let lambda = tables::lookup(kind, 1, 0.05, Horizon::Retrospective)?;
        for &tau in taus {
            let points = c_values
                .iter()
                .map(|&c| Ok((c, local_power(kind, &BreakSpec::new(c, tau)?, Horizon::Retrospective, BoundaryShape::Linear, lambda, sim)?)))
                .collect::<Result<Vec<_>>>()?;
            curves.push(Curve { label: format!("{kind} power, tau*={tau}"), points });
        }
        let points = tau_grid
            .iter()
            .map(|&tau| Ok((tau, local_power(kind, &BreakSpec::new(c_fixed, tau)?, Horizon::Retrospective, BoundaryShape::Linear, lambda, sim)?)))
            .collect::<Result<Vec<_>>>()?;
        curves.push(Curve { label: format!("{kind} power, c={c_fixed}"), points });
    }
    Ok(curves)
}

/// The three monitoring designs compared in the local delay and size figures.
fn monitoring_designs(m: f64, sim: &SimConfig) -> Result<[(&'static str, DetectorKind, BoundaryShape, f64); 3]> {
    let h = Horizon::Finite(m);
    let rad = BoundaryShape::Radical { alpha: 0.05 };
    let sbq = match tables::lookup(DetectorKind::Stacked, 1, 0.05, h) {
        Ok(l) => l,
        Err(_) => crate::limit_sim::critical_value(DetectorKind::Stacked, 1, h, BoundaryShape::Linear, 0.05, sim)?,
    };
    let q = crate::limit_sim::critical_value(DetectorKind::Forward, 1, h, BoundaryShape::Linear, 0.05, sim)?;
    let csw = crate::limit_sim::critical_value(DetectorKind::Forward, 1, h, rad, 0.05, sim)?;
    Ok([
        ("SBQ", DetectorKind::Stacked, BoundaryShape::Linear, sbq),
        ("Q", DetectorKind::Forward, BoundaryShape::Linear, q),
        ("CSW", DetectorKind::Forward, rad, csw),
    ])
}

/// Local mean relative delay of the monitoring detectors with horizon `m`,
/// each at its simulated 5% critical value: against `c/σ` for each `τ*` in
/// `taus`, and against `τ*` in `tau_grid` at `c/σ = c_fixed`.
pub fn delay_figure(
    m: f64,
    taus: &[f64],
    c_values: &[f64],
    c_fixed: f64,
    tau_grid: &[f64],
    sim: &SimConfig,
) -> Result<Vec<Curve>> {
    let mut curves = Vec::new();
    for (name, kind, shape, lambda) in monitoring_designs(m, sim)? {
        for &tau in taus {
            let mut c = delay_curve(kind, shape, tau, m, c_values, lambda, sim)?;
            c.label = format!("{name} delay, tau*={tau}, m={m}");
            curves.push(c);
        }
        let mut points = Vec::new();
        for &tau in tau_grid {
            let d = crate::limit_sim::local_delay(kind, &BreakSpec::new(c_fixed, tau)?, m, shape, lambda, sim)?;
            if let Some(v) = d.mean_delay {
                points.push((tau, v));
            }
        }
        curves.push(Curve { label: format!("{name} delay, c={c_fixed}, m={m}"), points });
    }
    Ok(curves)
}

/// Null first-crossing histograms at 5%: the retrospective detectors, then
/// the monitoring designs with horizon `m`.
pub fn size_figure(m: f64, bins: usize, sim: &SimConfig) -> Result<Vec<Curve>> {
    let mut curves = Vec::new();
    for kind in [DetectorKind::Forward, DetectorKind::Backward, DetectorKind::Stacked] {
        let lambda = tables::lookup(kind, 1, 0.05, Horizon::Retrospective)?;
        let h = size_distribution(kind, Horizon::Retrospective, BoundaryShape::Linear, lambda, bins, sim)?;
        curves.push(Curve { label: format!("{kind} size distribution, ret"), points: h.centers().into_iter().zip(h.mass).collect() });
    }
    for (name, kind, shape, lambda) in monitoring_designs(m, sim)? {
        let h = size_distribution(kind, Horizon::Finite(m), shape, lambda, bins, sim)?;
        curves.push(Curve { label: format!("{name} size distribution, m={m}"), points: h.centers().into_iter().zip(h.mass).collect() });
    }
    Ok(curves)
}
