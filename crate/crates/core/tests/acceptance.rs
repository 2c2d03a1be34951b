//! Acceptance run at desk scale: one PASS/FAIL line per criterion, non-zero
//! exit status if any criterion fails. Run with
//! `cargo test -p cusum --test acceptance`.

use std::process::ExitCode;
use std::time::Instant;

use cusum::breakpoint::{estimate_break_bq, estimate_break_ml, BreakContext};
use cusum::detectors::{backward_max_stat, cusum_path, forward_max_stat, stacked_max_stat, Boundary};
use cusum::harness::{self, ExperimentConfig, ExperimentReport, Model, BREAK_TABLE_DESIGNS};
use cusum::limit_sim::{critical_value_table, local_power, size_distribution, BreakSpec, SimConfig};
use cusum::rng::{domain_tag, stream, McRng};
use cusum::tables::{self, MON_ALPHAS, MON_SBQ, RETRO_ALPHAS, RETRO_Q, RETRO_SBQ};
use cusum::{
    fit_history, inverse_sqrt_symmetric, monitor_init, monitor_step, BoundaryShape, Dataset, DetectorConfig,
    DetectorKind, Horizon,
};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

mod common;
use common::*;

const SEED: u64 = 1;
const DESK_REPS: usize = 20_000;

struct Criterion {
    pass: bool,
    lines: Vec<String>,
}

impl Criterion {
    fn new() -> Self {
        Criterion { pass: true, lines: Vec::new() }
    }

    fn check(&mut self, ok: bool, line: String) {
        self.pass &= ok;
        self.lines.push(format!("{} {line}", if ok { "ok  " } else { "MISS" }));
    }

    fn info(&mut self, line: String) {
        self.lines.push(format!("info {line}"));
    }

    /// `|estimate − target| ≤ max(tol, 3 s.e.)`.
    fn near(&mut self, what: &str, estimate: f64, se: f64, target: f64, tol: f64) {
        let bound = tol.max(3.0 * se);
        self.check(
            (estimate - target).abs() <= bound,
            format!("{what}: {estimate:.4} (s.e. {se:.4}) vs {target} ± {bound:.4}"),
        );
    }

    fn near_cell(&mut self, r: &ExperimentReport, row: &str, col: &str, target: f64, tol: f64) {
        match r.get(row, col) {
            Some(c) => self.near(&format!("{row} {col}"), c.estimate, c.std_error, target, tol),
            None => self.check(false, format!("{row} {col}: missing")),
        }
    }
}

fn cell(r: &ExperimentReport, row: &str, col: &str) -> f64 {
    r.get(row, col).map_or(f64::NAN, |c| c.estimate)
}

fn desk_sim() -> SimConfig {
    SimConfig::desk(SEED)
}

fn desk_exp(reps: usize) -> ExperimentConfig {
    ExperimentConfig { reps, null_reps: DESK_REPS, seed: SEED, workers: None }
}

fn retro_critical_values() -> Criterion {
    let mut c = Criterion::new();
    let alphas = [0.1, 0.05, 0.01];
    let r = harness::run_critical_value_table(
        "1",
        &[DetectorKind::Forward, DetectorKind::Backward],
        &[1, 2, 3, 4],
        &alphas,
        &[Horizon::Retrospective],
        &desk_sim(),
    )
    .unwrap();
    for kind in ["q", "bq"] {
        for nu in 1..=4 {
            for a in alphas {
                let j = RETRO_ALPHAS.iter().position(|&x| x == a).unwrap();
                c.near_cell(&r, &format!("nu={nu}"), &format!("{kind}/ret/{a}"), RETRO_Q[nu - 1][j], 0.02);
            }
        }
    }
    let s = harness::run_critical_value_table("1", &[DetectorKind::Stacked], &[1], &[0.05], &[Horizon::Retrospective], &desk_sim())
        .unwrap();
    c.near_cell(&s, "nu=1", "sbq/ret/0.05", 1.198, 0.02);
    c
}

fn monitoring_critical_values() -> Criterion {
    let mut c = Criterion::new();
    let finite = [Horizon::Finite(2.0), Horizon::Finite(4.0), Horizon::Finite(10.0)];
    let r = harness::run_critical_value_table("2", &[DetectorKind::Stacked], &[1], &[0.05], &finite, &desk_sim()).unwrap();
    for (h, target) in finite.iter().zip([1.198, 1.339, 1.440]) {
        c.near_cell(&r, "nu=1", &format!("sbq/{h}/0.05"), target, 0.02);
    }
    let fine = SimConfig { n_grid: 10_000, ..desk_sim() };
    let r = harness::run_critical_value_table("2", &[DetectorKind::Stacked], &[1], &[0.05], &[Horizon::Infinite], &fine).unwrap();
    c.near_cell(&r, "nu=1", &format!("sbq/{}/0.05", Horizon::Infinite), 1.514, 0.02);
    c
}

fn retrospective_size() -> Criterion {
    let mut c = Criterion::new();
    let r = harness::run_size_table(&[1], &[100, 500], &desk_exp(DESK_REPS)).unwrap();
    for (row, targets) in [("Q", [3.8, 4.6]), ("BQ", [4.1, 4.6]), ("SBQ", [2.8, 4.2])] {
        for (t, target) in [100, 500].iter().zip(targets) {
            c.near_cell(&r, row, &format!("k=1,T={t}"), target, 0.5);
        }
    }
    let r2 = harness::run_size_table(&[2], &[100], &desk_exp(DESK_REPS)).unwrap();
    for row in ["Q", "BQ", "SBQ"] {
        c.info(format!("k=2,T=100 {row}: {:.2}%", cell(&r2, row, "k=2,T=100")));
    }
    c
}

fn retrospective_power() -> Criterion {
    let mut c = Criterion::new();
    let taus = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];
    let r = harness::run_power_table(&[Model::MeanShift], 100, &taus, 0.8, &desk_exp(DESK_REPS)).unwrap();
    for (name, target) in [("Q", 54.0), ("BQ", 93.8), ("SBQ", 89.4), ("supW", 92.5)] {
        c.near_cell(&r, "tau=0.5", &format!("mean/{name}"), target, 1.5);
    }
    for tau in taus.iter().filter(|&&t| t >= 0.4) {
        let row = format!("tau={tau}");
        let (q, bq, sbq) = (cell(&r, &row, "mean/Q"), cell(&r, &row, "mean/BQ"), cell(&r, &row, "mean/SBQ"));
        c.check(bq > sbq && sbq > q, format!("{row}: BQ {bq:.1} > SBQ {sbq:.1} > Q {q:.1}"));
    }
    let (q, bq) = (cell(&r, "tau=0.1", "mean/Q"), cell(&r, "tau=0.1", "mean/BQ"));
    c.check(q > bq, format!("tau=0.1: Q {q:.1} > BQ {bq:.1}"));
    c
}

fn monitoring_size() -> Criterion {
    let mut c = Criterion::new();
    let r = harness::run_monitor_size_table(&[1], &[500], &[2.0, 10.0], &desk_exp(DESK_REPS)).unwrap();
    c.near_cell(&r, "m=2", "k=1,T=500/Q", 4.4, 0.5);
    c.near_cell(&r, "m=10", "k=1,T=500/Q", 4.8, 0.5);
    c.near_cell(&r, "m=2", "k=1,T=500/CSW", 0.1, 0.2);
    c
}

fn detection_delay() -> Criterion {
    let mut c = Criterion::new();
    let taus = [2.0, 3.0, 5.0, 10.0];
    let r = harness::run_delay_table(&[Model::MeanShift], 100, 20.0, &taus, 0.8, &desk_exp(10_000)).unwrap();
    c.near_cell(&r, "tau=3", "mean/SBQ", 36.0, 3.0);
    c.near_cell(&r, "tau=3", "mean/Q", 99.1, 5.0);
    c.near_cell(&r, "tau=3", "mean/CSW", 71.1, 4.0);
    let sbq: Vec<f64> = taus.iter().map(|t| cell(&r, &format!("tau={t}"), "mean/SBQ")).collect();
    let spread = sbq.iter().copied().fold(f64::NEG_INFINITY, f64::max) - sbq.iter().copied().fold(f64::INFINITY, f64::min);
    c.check(spread <= 5.0, format!("SBQ delay over tau* in {taus:?}: {sbq:.1?}, spread {spread:.2} ≤ 5"));
    c
}

fn break_dates() -> Criterion {
    let mut c = Criterion::new();
    let taus = [0.5, 0.65, 0.8, 0.85, 0.9, 0.95, 0.97, 0.99];
    let r = harness::run_break_table(&BREAK_TABLE_DESIGNS, &taus, &desk_exp(10_000)).unwrap();
    c.near_cell(&r, "tau=0.9", "T=100/bias/ML", -0.137, 0.01);
    c.near_cell(&r, "tau=0.9", "T=100/bias/BQ", -0.065, 0.01);
    for (t, _) in BREAK_TABLE_DESIGNS {
        for tau in taus.iter().filter(|&&x| x >= 0.85) {
            let row = format!("tau={tau}");
            let (bm, bb) = (cell(&r, &row, &format!("T={t}/bias/ML")), cell(&r, &row, &format!("T={t}/bias/BQ")));
            let (mm, mb) = (cell(&r, &row, &format!("T={t}/mse/ML")), cell(&r, &row, &format!("T={t}/mse/BQ")));
            let line = format!("T={t} {row}: bias BQ {bb:.3} vs ML {bm:.3}, MSE BQ {mb:.4} vs ML {mm:.4}");
            if t == 100 {
                c.check(bb.abs() < bm.abs() && mb < mm, line);
            } else {
                c.info(line);
            }
        }
    }
    c
}

fn random_dataset(rng: &mut McRng) -> Dataset {
    let k = rng.random_range(1..=3);
    let t = rng.random_range(20..=80);
    let cols: Vec<Vec<f64>> = (1..k).map(|_| (0..t).map(|_| rng.sample(StandardNormal)).collect()).collect();
    let jump_at = rng.random_range(0..t);
    let jump: f64 = rng.random_range(-2.0..2.0);
    let y = (0..t)
        .map(|i| {
            let e: f64 = rng.sample(StandardNormal);
            e + cols.iter().map(|c| 0.5 * c[i]).sum::<f64>() + if i >= jump_at { jump } else { 0.0 }
        })
        .collect();
    Dataset::with_intercept(y, &cols).unwrap()
}

fn property_suite() -> Criterion {
    let mut c = Criterion::new();
    let dom = domain_tag("acceptance/properties");
    let datasets: Vec<Dataset> =
        (0..200).map(|i| random_dataset(&mut stream(SEED, dom, i))).filter(|d| well_posed(d)).collect();
    let bd = Boundary::linear(1.0).unwrap();

    let mut worst = 0.0_f64;
    for data in &datasets {
        let fit = fit_history(data).unwrap();
        let path = cusum_path(&fit);
        let n = fit.len();
        let scale = naive_standardizer(data, &fit.w);
        let total = DVector::from_column_slice(path.point(n));
        let mut back = DVector::zeros(fit.k());
        for t in (1..=n).rev() {
            back += DVector::from_column_slice(fit.xw_row(t - 1));
            let sum = DVector::from_column_slice(path.point(t - 1)) + &scale * &back;
            worst = worst.max((sum - &total).amax());
        }
    }
    c.check(worst <= 1e-10, format!("forward + backward = total on {} datasets, max error {worst:.1e}", datasets.len()));

    let contained = datasets.iter().all(|d| {
        let p = cusum_path(&fit_history(d).unwrap());
        let s = stacked_max_stat(&p, &bd).statistic;
        s >= forward_max_stat(&p, &bd).statistic && s >= backward_max_stat(&p, &bd).statistic
    });
    c.check(contained, "stacked statistic dominates forward and backward".into());

    let mut invariant = true;
    for (i, data) in datasets.iter().enumerate() {
        let (cs, b) = (0.3 + i as f64 * 0.05, [1.5, -2.0, 0.7]);
        let moved = data.map_response(|_, y, x| cs * y + x.iter().zip(&b).map(|(a, b)| a * b).sum::<f64>());
        let (pa, pb) = (cusum_path(&fit_history(data).unwrap()), cusum_path(&fit_history(&moved).unwrap()));
        let same = |a: f64, b: f64| (a - b).abs() <= 1e-9 * a.abs().max(1.0);
        invariant &= same(forward_max_stat(&pa, &bd).statistic, forward_max_stat(&pb, &bd).statistic)
            && same(backward_max_stat(&pa, &bd).statistic, backward_max_stat(&pb, &bd).statistic)
            && same(stacked_max_stat(&pa, &bd).statistic, stacked_max_stat(&pb, &bd).statistic);
        let ctx = BreakContext::Retrospective;
        if let (Ok(a), Ok(b)) = (estimate_break_ml(data, ctx), estimate_break_ml(&moved, ctx)) {
            invariant &= a.t_hat == b.t_hat;
        }
        let (fa, fb) = (fit_history(data).unwrap(), fit_history(&moved).unwrap());
        invariant &= estimate_break_bq(&fa, ctx).unwrap().t_hat == estimate_break_bq(&fb, ctx).unwrap().t_hat;
    }
    c.check(invariant, "statistics and break estimators invariant under y -> c y + X b".into());

    let sdom = domain_tag("acceptance/streams");
    let mut streams = 0;
    let mut worst = 0.0_f64;
    let mut i = 0;
    while streams < 200 {
        let mut rng = stream(SEED, sdom, i);
        i += 1;
        let data = random_dataset(&mut rng);
        let t_hist = rng.random_range(data.k() + 8..data.len() - 1);
        let hist = data.slice(0, t_hist).unwrap();
        if !well_posed(&hist) {
            continue;
        }
        streams += 1;
        let kind = if streams % 2 == 0 { DetectorKind::Stacked } else { DetectorKind::Forward };
        let mut state = monitor_init(&hist, &DetectorConfig::new(kind, 0.05, Horizon::Infinite).with_lambda(1.0)).unwrap();
        let expect = offline_monitor(&data, t_hist, kind == DetectorKind::Stacked);
        for (j, t) in (t_hist..data.len()).enumerate() {
            let got = monitor_step(&mut state, data.row(t), data.y()[t]).unwrap().statistic;
            worst = worst.max((got - expect[j]).abs() / expect[j].max(1.0));
        }
    }
    c.check(worst <= 1e-10, format!("online monitor = offline brute force on {streams} streams, max error {worst:.1e}"));

    let mdom = domain_tag("acceptance/spd");
    let mut worst = 0.0_f64;
    for i in 0..200 {
        let mut rng = stream(SEED, mdom, i);
        let k = rng.random_range(1..=6);
        let g = DMatrix::from_fn(k, k, |_, _| rng.sample::<f64, _>(StandardNormal));
        let a = &g * g.transpose() + DMatrix::identity(k, k) * 0.05;
        let b = inverse_sqrt_symmetric(&a, 1e-12).unwrap();
        worst = worst.max((&b * &a * &b - DMatrix::identity(k, k)).amax());
    }
    c.check(worst <= 1e-8, format!("‖BAB − I‖ on 200 random SPD matrices: {worst:.1e}"));

    let increasing = |xs: &[f64]| xs.windows(2).all(|w| w[0] < w[1]);
    let mut mono = RETRO_Q.iter().chain(RETRO_SBQ.iter()).all(|r| increasing(r));
    mono &= MON_SBQ.iter().flatten().all(|r| increasing(r));
    for j in 0..RETRO_ALPHAS.len() {
        mono &= increasing(&RETRO_Q.map(|r| r[j])) && increasing(&RETRO_SBQ.map(|r| r[j]));
    }
    for j in 0..MON_ALPHAS.len() {
        for i in 0..11 {
            mono &= increasing(&MON_SBQ.map(|b| b[i][j]));
        }
    }
    let kinds = [DetectorKind::Forward, DetectorKind::Stacked];
    let gen = critical_value_table(&kinds, &[1, 2, 3], &RETRO_ALPHAS, &[Horizon::Retrospective], BoundaryShape::Linear, &SimConfig { n_grid: 500, n_reps: 5000, seed: SEED, workers: None }).unwrap();
    for kind in kinds {
        for nu in 1..=3 {
            mono &= increasing(&RETRO_ALPHAS.map(|a| gen.get(kind, nu, a, Horizon::Retrospective).unwrap()));
        }
        for a in RETRO_ALPHAS {
            mono &= increasing(&[1, 2, 3].map(|nu| gen.get(kind, nu, a, Horizon::Retrospective).unwrap()));
        }
    }
    c.check(mono, "quantile and dimension monotonicity of embedded and generated tables".into());

    let run = |w: usize| {
        let sim = SimConfig { n_grid: 300, n_reps: 2000, seed: SEED, workers: Some(w) };
        let t = critical_value_table(&kinds, &[1, 2], &[0.05], &[Horizon::Retrospective, Horizon::Finite(4.0)], BoundaryShape::Linear, &sim).unwrap();
        let e = ExperimentConfig { reps: 300, null_reps: 300, seed: SEED, workers: Some(w) };
        let r = harness::run_power_table(&[Model::MeanShift], 60, &[0.5], 0.8, &e).unwrap();
        let mut bits: Vec<u64> = t.entries.iter().map(|e| e.lambda.to_bits()).collect();
        bits.extend(r.cells.iter().map(|c| c.estimate.to_bits()));
        bits
    };
    let one = run(1);
    c.check(run(2) == one && run(8) == one, "bitwise identical Monte Carlo output with 1, 2 and 8 workers".into());
    c
}

fn local_limits() -> Criterion {
    let mut c = Criterion::new();
    let sim = desk_sim();
    let ret = Horizon::Retrospective;
    let lin = BoundaryShape::Linear;
    let power = |kind, cs, tau| {
        let l = tables::lookup(kind, 1, 0.05, ret).unwrap();
        local_power(kind, &BreakSpec::new(cs, tau).unwrap(), ret, lin, l, &sim).unwrap()
    };
    let (f5, b5) = (power(DetectorKind::Forward, 8.0, 0.5), power(DetectorKind::Backward, 8.0, 0.5));
    c.check(b5 > f5, format!("c=8, tau*=0.5: backward {b5:.3} > forward {f5:.3}"));
    let (f1, b1) = (power(DetectorKind::Forward, 8.0, 0.1), power(DetectorKind::Backward, 8.0, 0.1));
    c.check(f1 > b1, format!("c=8, tau*=0.1: forward {f1:.3} > backward {b1:.3}"));
    for kind in [DetectorKind::Forward, DetectorKind::Backward, DetectorKind::Stacked] {
        let p = 100.0 * power(kind, 0.0, 0.5);
        let se = (p * (100.0 - p) / sim.n_reps as f64).sqrt();
        c.near(&format!("{kind} size at c=0 (%)"), p, se, 5.0, 0.5);
    }
    let hist = |kind| {
        let l = tables::lookup(kind, 1, 0.05, ret).unwrap();
        size_distribution(kind, ret, lin, l, 20, &sim).unwrap()
    };
    let (fw, bw) = (hist(DetectorKind::Forward), hist(DetectorKind::Backward));
    let mode = fw.mode();
    c.check(mode > 0.15 && mode < 0.4, format!("forward size-distribution mode {mode:.3} in (0.15, 0.4)"));
    let w = bw.wasserstein(&fw.reflected());
    c.check(w <= 0.05, format!("backward vs mirrored forward size distribution: Wasserstein {w:.4} ≤ 0.05"));
    c
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Criterion); 9] = [
        ("retrospective critical values", retro_critical_values),
        ("monitoring critical values of the stacked detector", monitoring_critical_values),
        ("empirical size of the retrospective tests", retrospective_size),
        ("size-adjusted power under a mean shift", retrospective_power),
        ("empirical size of open-ended monitoring", monitoring_size),
        ("detection delay", detection_delay),
        ("break-date estimators", break_dates),
        ("property suite", property_suite),
        ("local-limit power, size and size distribution", local_limits),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let id = (i + 1).to_string();
        if !filter.is_empty() && !filter.contains(&id) {
            continue;
        }
        let started = Instant::now();
        let c = run();
        for line in &c.lines {
            println!("      {line}");
        }
        println!("{} criterion {id}: {name} ({:.0} s)", if c.pass { "PASS" } else { "FAIL" }, started.elapsed().as_secs_f64());
        failed += usize::from(!c.pass);
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
