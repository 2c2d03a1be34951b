use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use cusum::harness::{self, ExperimentConfig, ExperimentReport, Model};
use cusum::io;
use cusum::limit_sim::{critical_value_table, SimConfig};
use cusum::monitor::{MonitorReport, MonitorStatus};
use cusum::{
    estimate_break_bq, estimate_break_ml, fit_history, monitor_init, monitor_step, retrospective_test, BoundaryShape,
    BreakContext, CusumError, DetectorConfig, DetectorKind, Horizon, MonitorState,
};
use serde::Serialize;

const BUILD: &str = env!("CUSUM_BUILD");
const ENVELOPE_SCHEMA_VERSION: u32 = 1;

#[derive(Parser)]
#[command(name = "cusum", version = concat!(env!("CARGO_PKG_VERSION"), " (", env!("CUSUM_BUILD"), ")"))]
#[command(about = "CUSUM tests and monitors for structural change in linear regressions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Retrospective test on a CSV dataset. Exit code 2 on rejection.
    Test(TestArgs),
    /// Monitor a stream of observations after a historical sample.
    Monitor(MonitorArgs),
    /// Simulate critical values of the limiting distributions.
    Critval(CritvalArgs),
    /// Rerun a table or figure experiment.
    Replicate(ReplicateArgs),
    /// Estimate a break date.
    EstimateBreak(BreakArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum ShapeArg {
    Linear,
    Radical,
}

#[derive(Args)]
struct OutputArgs {
    /// Write the result here instead of standard output.
    #[arg(long, short)]
    output: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
}

#[derive(Args)]
struct DetectorArgs {
    /// q, bq or sbq.
    #[arg(long, default_value = "sbq")]
    detector: DetectorKind,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Critical value; looked up in the built-in tables when omitted.
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long, value_enum, default_value = "linear")]
    boundary: ShapeArg,
    /// File holding an orthonormal k × l matrix H for a partial-break test.
    #[arg(long)]
    projection: Option<PathBuf>,
    /// Not supported: the model always includes a constant.
    #[arg(long, hide = true)]
    no_intercept: bool,
}

impl DetectorArgs {
    fn config(&self, horizon: Horizon, k: usize) -> Result<DetectorConfig, CusumError> {
        if self.no_intercept {
            return Err(CusumError::InvalidConfig(
                "--no-intercept is not supported: the regression always includes a constant".into(),
            ));
        }
        let shape = match self.boundary {
            ShapeArg::Linear => BoundaryShape::Linear,
            ShapeArg::Radical => BoundaryShape::Radical { alpha: self.alpha },
        };
        let mut cfg = DetectorConfig::new(self.detector, self.alpha, horizon).with_shape(shape);
        if let Some(l) = self.lambda {
            cfg = cfg.with_lambda(l);
        }
        if let Some(p) = &self.projection {
            cfg = cfg.with_projection(io::read_matrix(BufReader::new(File::open(p)?), k)?);
        }
        cfg.validate(k)?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct TestArgs {
    /// CSV file with header `y,x1,...`.
    input: PathBuf,
    #[command(flatten)]
    detector: DetectorArgs,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Args)]
struct MonitorArgs {
    /// Historical sample (CSV with header `y,x1,...`).
    #[arg(long, required_unless_present = "resume")]
    history: Option<PathBuf>,
    /// Observations to monitor, one `y,x1,...` line each; `-` reads standard input.
    #[arg(long, default_value = "-")]
    stream: PathBuf,
    #[command(flatten)]
    detector: DetectorArgs,
    /// Horizon m (monitoring up to ⌊mT⌋) or `inf`.
    #[arg(long, default_value = "inf")]
    horizon: Horizon,
    /// Continue a session saved with --save-state instead of starting from --history.
    #[arg(long, conflicts_with = "history")]
    resume: Option<PathBuf>,
    /// Save the session state here when the stream ends.
    #[arg(long)]
    save_state: Option<PathBuf>,
    /// Stop reading at the first boundary crossing.
    #[arg(long)]
    stop_on_detect: bool,
    /// True break T* (first post-break observation) for reporting the delay.
    #[arg(long)]
    true_break: Option<usize>,
    /// Maximum number of observations a stacked session retains.
    #[arg(long)]
    capacity: Option<usize>,
    /// Write a JSON summary with the full trace here.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct SimArgs {
    /// Master seed; generated and printed when omitted.
    #[arg(long)]
    seed: Option<u64>,
    /// Replications (default 20000, or 100000 with --paper-scale).
    #[arg(long)]
    reps: Option<usize>,
    /// Grid points per unit length (default 2000, or 10000 with --paper-scale).
    #[arg(long)]
    grid: Option<usize>,
    /// Use the full simulation budget: 100000 replications on a 10000-point grid.
    #[arg(long)]
    paper_scale: bool,
    /// Worker threads (default: all cores). Results do not depend on this.
    #[arg(long)]
    workers: Option<usize>,
}

impl SimArgs {
    fn seed(&self) -> u64 {
        self.seed.unwrap_or_else(|| {
            let s = rand::random::<u64>();
            eprintln!("seed: {s}");
            s
        })
    }

    fn sim(&self, seed: u64) -> SimConfig {
        let mut cfg = if self.paper_scale { SimConfig::paper(seed) } else { SimConfig::desk(seed) };
        if let Some(r) = self.reps {
            cfg.n_reps = r;
        }
        if let Some(g) = self.grid {
            cfg.n_grid = g;
        }
        cfg.with_workers(self.workers)
    }

    fn experiment(&self, seed: u64) -> ExperimentConfig {
        let mut cfg = if self.paper_scale { ExperimentConfig::paper(seed) } else { ExperimentConfig::desk(seed) };
        if let Some(r) = self.reps {
            cfg.reps = r;
        }
        cfg.workers = self.workers;
        cfg
    }
}

#[derive(Args)]
struct CritvalArgs {
    /// Detectors, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "sbq")]
    kind: Vec<DetectorKind>,
    /// Dimensions ν, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "1")]
    nu: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.05,0.01")]
    alpha: Vec<f64>,
    /// Horizons: `ret`, a number m > 1, or `inf`; comma separated.
    #[arg(long, value_delimiter = ',', default_value = "ret")]
    horizon: Vec<Horizon>,
    #[arg(long, value_enum, default_value = "linear")]
    boundary: ShapeArg,
    /// Size of the radical boundary.
    #[arg(long, default_value_t = 0.05)]
    radical_alpha: f64,
    #[command(flatten)]
    sim: SimArgs,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Args)]
#[group(required = true, multiple = false, id = "target")]
struct Target {
    /// Table number (1 to 7).
    #[arg(long)]
    table: Option<u32>,
    /// Figure number (2 to 4).
    #[arg(long)]
    figure: Option<u32>,
}

#[derive(Args)]
struct ReplicateArgs {
    #[command(flatten)]
    target: Target,
    #[command(flatten)]
    sim: SimArgs,
    /// Null replications for size adjustment (default: same as --reps).
    #[arg(long)]
    null_reps: Option<usize>,
    /// Restrict the critical-value tables to these dimensions.
    #[arg(long, value_delimiter = ',')]
    nu: Option<Vec<usize>>,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Ml,
    Bq,
    Both,
}

#[derive(Args)]
struct BreakArgs {
    /// CSV file with header `y,x1,...`.
    input: PathBuf,
    #[arg(long, value_enum, default_value = "both")]
    method: MethodArg,
    /// Historical length T; restricts the search to T < t ≤ detection time.
    #[arg(long, requires = "detected_at")]
    history_length: Option<usize>,
    /// Detection time T_d; must equal the number of rows in the input.
    #[arg(long, requires = "history_length")]
    detected_at: Option<usize>,
    #[command(flatten)]
    out: OutputArgs,
}

/// Versioned JSON wrapper for results that carry no version of their own.
#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    schema_version: u32,
    command: &'a str,
    build: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    result: T,
}

fn envelope<'a, T: Serialize>(command: &'a str, seed: Option<u64>, result: T) -> Envelope<'a, T> {
    Envelope { schema_version: ENVELOPE_SCHEMA_VERSION, command, build: BUILD, seed, result }
}

/// A closed standard output (for example `| head`) is not an error.
fn pipe_ok(r: std::io::Result<()>) -> Result<(), CusumError> {
    match r {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        r => Ok(r?),
    }
}

fn emit(out: &OutputArgs, text: &str) -> Result<(), CusumError> {
    match &out.output {
        Some(p) => std::fs::write(p, text)?,
        None => {
            let mut o = std::io::stdout().lock();
            pipe_ok(o.write_all(text.as_bytes()))?;
            if !text.ends_with('\n') {
                pipe_ok(o.write_all(b"\n"))?;
            }
        }
    }
    Ok(())
}

fn run_test(args: &TestArgs) -> Result<ExitCode, CusumError> {
    let data = io::read_dataset_file(&args.input)?;
    let cfg = args.detector.config(Horizon::Retrospective, data.k())?;
    let report = retrospective_test(&data, &cfg)?;
    let text = match args.out.format {
        Format::Json => io::to_json(&envelope("test", None, &report))?,
        Format::Csv => {
            let mut s = String::from("t,value,boundary\n");
            for p in report.per_t.iter().flatten() {
                s.push_str(&format!("{},{},{}\n", p.t, p.value, p.boundary));
            }
            s
        }
    };
    emit(&args.out, &text)?;
    Ok(if report.reject { ExitCode::from(2) } else { ExitCode::SUCCESS })
}

fn status_line(s: &MonitorStatus) -> String {
    format!(
        "{},{},{},{},{}",
        s.t,
        s.detector_value,
        s.boundary_at_t,
        s.crossed,
        s.stopping_time.map(|t| t.to_string()).unwrap_or_default()
    )
}

fn open_stream(p: &Path) -> Result<Box<dyn BufRead>, CusumError> {
    if p.as_os_str() == "-" {
        Ok(Box::new(BufReader::new(std::io::stdin())))
    } else {
        Ok(Box::new(BufReader::new(File::open(p)?)))
    }
}

fn run_monitor(args: &MonitorArgs) -> Result<ExitCode, CusumError> {
    let mut state = match (&args.resume, &args.history) {
        (Some(p), _) => MonitorState::from_json(&std::fs::read_to_string(p)?)?,
        (None, Some(h)) => {
            let hist = io::read_dataset_file(h)?;
            let cfg = args.detector.config(args.horizon, hist.k())?;
            monitor_init(&hist, &cfg)?
        }
        (None, None) => unreachable!("clap requires --history or --resume"),
    };
    if let Some(cap) = args.capacity {
        state = state.with_capacity(cap);
    }
    let k = state.k();
    let mut out = BufWriter::new(std::io::stdout().lock());
    pipe_ok(writeln!(out, "t,value,boundary,crossed,stopping_time").and_then(|_| out.flush()))?;
    let mut trace = Vec::new();
    let mut horizon_reached = false;
    for line in open_stream(&args.stream)?.lines() {
        let Some((x, y)) = io::parse_observation(&line?, k)? else { continue };
        if state.endpoint().is_some_and(|end| state.t_now() >= end) {
            horizon_reached = true;
            break;
        }
        let status = monitor_step(&mut state, &x, y)?;
        pipe_ok(writeln!(out, "{}", status_line(&status)).and_then(|_| out.flush()))?;
        trace.push(status);
        if args.stop_on_detect && status.crossed {
            break;
        }
    }
    horizon_reached |= state.endpoint().is_some_and(|end| state.t_now() >= end);
    if let Some(p) = &args.save_state {
        std::fs::write(p, state.to_json()?)?;
    }
    let stopping_time = state.stopped_at();
    if let Some(p) = &args.report {
        let report = MonitorReport {
            detector: state.kind(),
            lambda: state.lambda(),
            t_hist: state.t_hist(),
            last_t: state.t_now(),
            stopping_time,
            delay: match (stopping_time, args.true_break) {
                (Some(td), Some(tb)) => Some(td as i64 - tb as i64),
                _ => None,
            },
            running_max: state.running_max(),
            horizon_reached,
            trace,
        };
        std::fs::write(p, io::to_json(&envelope("monitor", None, &report))?)?;
    }
    Ok(if stopping_time.is_some() { ExitCode::from(2) } else { ExitCode::SUCCESS })
}

fn run_critval(args: &CritvalArgs) -> Result<ExitCode, CusumError> {
    let seed = args.sim.seed();
    let sim = args.sim.sim(seed);
    let shape = match args.boundary {
        ShapeArg::Linear => BoundaryShape::Linear,
        ShapeArg::Radical => BoundaryShape::Radical { alpha: args.radical_alpha },
    };
    if args.kind.contains(&DetectorKind::Stacked) && args.horizon.contains(&Horizon::Infinite) && sim.n_grid != 10_000 {
        eprintln!(
            "warning: the open-ended stacked statistic depends on the grid; the built-in table uses 10000 points, this run uses {}",
            sim.n_grid
        );
    }
    let table = critical_value_table(&args.kind, &args.nu, &args.alpha, &args.horizon, shape, &sim)?;
    let text = match args.out.format {
        Format::Json => io::to_json(&envelope("critval", Some(seed), &table))?,
        Format::Csv => io::critical_values_to_csv(&table)?,
    };
    emit(&args.out, &text)?;
    Ok(ExitCode::SUCCESS)
}

fn merge(mut a: ExperimentReport, b: ExperimentReport) -> ExperimentReport {
    a.cells.extend(b.cells);
    a.metadata.runtime_secs += b.metadata.runtime_secs;
    a
}

fn replicate_table(n: u32, args: &ReplicateArgs, seed: u64) -> Result<ExperimentReport, CusumError> {
    let mut cfg = args.sim.experiment(seed);
    cfg.null_reps = args.null_reps.unwrap_or(cfg.reps);
    let sim = args.sim.sim(seed);
    let nus: Vec<usize> = args.nu.clone().unwrap_or_else(|| (1..=8).collect());
    let taus_ret = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];
    match n {
        1 => harness::run_critical_value_table(
            "1",
            &[DetectorKind::Forward, DetectorKind::Backward, DetectorKind::Stacked],
            &nus,
            &cusum::tables::RETRO_ALPHAS,
            &[Horizon::Retrospective],
            &sim,
        ),
        2 => {
            let finite: Vec<Horizon> = cusum::tables::MON_HORIZONS[..10].iter().map(|&m| Horizon::Finite(m)).collect();
            let a = harness::run_critical_value_table("2", &[DetectorKind::Stacked], &nus, &cusum::tables::MON_ALPHAS, &finite, &sim)?;
            let inf_sim = SimConfig { n_grid: args.sim.grid.unwrap_or(10_000), ..sim };
            let b = harness::run_critical_value_table(
                "2",
                &[DetectorKind::Stacked],
                &nus,
                &cusum::tables::MON_ALPHAS,
                &[Horizon::Infinite],
                &inf_sim,
            )?;
            Ok(merge(a, b))
        }
        3 => harness::run_size_table(&[1, 2, 3, 4], &[100, 200, 500], &cfg),
        4 => harness::run_power_table(&[Model::MeanShift, Model::SlopeShift], 100, &taus_ret, 0.8, &cfg),
        5 => {
            let ms = [1.5, 2.0, 4.0, 6.0, 8.0, 10.0];
            let a = harness::run_monitor_size_table(&[1], &[100, 500], &ms, &cfg)?;
            let b = harness::run_monitor_size_table(&[2], &[100, 200, 500], &ms, &cfg)?;
            Ok(merge(a, b))
        }
        6 => harness::run_delay_table(
            &[Model::MeanShift, Model::SlopeShift],
            100,
            20.0,
            &[1.5, 2.0, 2.5, 3.0, 5.0, 10.0],
            0.8,
            &cfg,
        ),
        7 => harness::run_break_table(
            &harness::BREAK_TABLE_DESIGNS,
            &[0.5, 0.65, 0.8, 0.85, 0.9, 0.95, 0.97, 0.99],
            &cfg,
        ),
        _ => Err(CusumError::InvalidConfig(format!("no table {n}; tables 1 to 7 are available"))),
    }
}

fn replicate_figure(n: u32, args: &ReplicateArgs, seed: u64) -> Result<Vec<cusum::limit_sim::Curve>, CusumError> {
    let sim = args.sim.sim(seed);
    let grid = |lo: f64, hi: f64, step: f64| -> Vec<f64> {
        let n = ((hi - lo) / step).round() as usize;
        (0..=n).map(|i| lo + i as f64 * step).collect()
    };
    match n {
        2 => harness::power_figure(&[0.1, 0.3, 0.5, 0.7, 0.9], &grid(0.0, 20.0, 2.0), 10.0, &grid(0.05, 0.95, 0.05), &sim),
        3 => harness::delay_figure(4.0, &[1.5, 3.0], &grid(4.0, 30.0, 2.0), 20.0, &grid(1.1, 3.9, 0.2), &sim),
        4 => harness::size_figure(10.0, 20, &sim),
        _ => Err(CusumError::InvalidConfig(format!("no figure {n}; figures 2 to 4 are available"))),
    }
}

fn run_replicate(args: &ReplicateArgs) -> Result<ExitCode, CusumError> {
    let seed = args.sim.seed();
    let text = match (args.target.table, args.target.figure) {
        (Some(n), _) => {
            let mut report = replicate_table(n, args, seed)?;
            report.metadata.build = Some(BUILD.into());
            match args.out.format {
                Format::Json => io::to_json(&report)?,
                Format::Csv => io::report_to_csv(&report)?,
            }
        }
        (None, Some(n)) => {
            let curves = replicate_figure(n, args, seed)?;
            match args.out.format {
                Format::Json => io::to_json(&envelope("replicate", Some(seed), &curves))?,
                Format::Csv => io::curves_to_csv(&curves)?,
            }
        }
        (None, None) => unreachable!("clap requires --table or --figure"),
    };
    emit(&args.out, &text)?;
    Ok(ExitCode::SUCCESS)
}

fn run_estimate_break(args: &BreakArgs) -> Result<ExitCode, CusumError> {
    let data = io::read_dataset_file(&args.input)?;
    let ctx = match (args.history_length, args.detected_at) {
        (Some(t_hist), Some(t_detect)) => BreakContext::Monitoring { t_hist, t_detect },
        _ => BreakContext::Retrospective,
    };
    let mut estimates = Vec::new();
    if matches!(args.method, MethodArg::Ml | MethodArg::Both) {
        estimates.push(estimate_break_ml(&data, ctx)?);
    }
    if matches!(args.method, MethodArg::Bq | MethodArg::Both) {
        estimates.push(estimate_break_bq(&fit_history(&data)?, ctx)?);
    }
    let text = match args.out.format {
        Format::Json => io::to_json(&envelope("estimate-break", None, &estimates))?,
        Format::Csv => {
            let mut s = String::from("method,t_hat,tau_hat,tau_hat_detect\n");
            for e in &estimates {
                let method = serde_json::to_value(e.method)?;
                s.push_str(&format!(
                    "{},{},{},{}\n",
                    method.as_str().unwrap_or_default(),
                    e.t_hat,
                    e.tau_hat,
                    e.tau_hat_detect.map(|v| v.to_string()).unwrap_or_default()
                ));
            }
            s
        }
    };
    emit(&args.out, &text)?;
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match &cli.command {
        Command::Test(a) => run_test(a),
        Command::Monitor(a) => run_monitor(a),
        Command::Critval(a) => run_critval(a),
        Command::Replicate(a) => run_replicate(a),
        Command::EstimateBreak(a) => run_estimate_break(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
