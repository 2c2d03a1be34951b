//! Forward, backward and stacked-backward CUSUM tests for structural change
//! in linear regressions, built on recursive residuals.
//!
//! The crate covers the whole workflow:
//!
//! * [`regression`]: recursive residuals and the historical fit,
//! * [`detectors`]: retrospective statistics and boundaries,
//! * [`monitor`]: online monitoring with stopping times,
//! * [`breakpoint`]: break-date estimation,
//! * [`limit_sim`]: Monte Carlo critical values and local-limit curves,
//! * [`harness`]: finite-sample experiments,
//! * [`io`]: CSV datasets and report serialization.
//!
//! ```
//! use cusum::{retrospective_test, Dataset, DetectorConfig, DetectorKind, Horizon};
//!
//! let y: Vec<f64> = (0..100).map(|t| if t < 70 { 0.0 } else { 3.0 } + ((t * 7) % 5) as f64 * 0.1).collect();
//! let data = Dataset::intercept_only(y)?;
//! let cfg = DetectorConfig::new(DetectorKind::Backward, 0.05, Horizon::Retrospective);
//! let report = retrospective_test(&data, &cfg)?;
//! assert!(report.reject);
//! # Ok::<(), cusum::CusumError>(())
//! ```

pub mod breakpoint;
pub mod detectors;
pub mod error;
pub mod harness;
pub mod io;
pub mod limit_sim;
pub mod linalg;
pub mod monitor;
pub mod regression;
pub mod rng;
pub mod scan;
pub mod tables;

pub use breakpoint::{estimate_break_bq, estimate_break_ml, BreakContext, BreakEstimate};
pub use detectors::{
    backward_max_stat, boundary_value, cusum_path, forward_max_stat, partial_project, retrospective_test,
    stacked_max_stat, Boundary, BoundaryShape, CusumPath, DetectorConfig, DetectorKind, Horizon, TestReport,
};
pub use error::{CusumError, Result};
pub use linalg::inverse_sqrt_symmetric;
pub use monitor::{monitor_init, monitor_run, monitor_step, MonitorReport, MonitorState, MonitorStatus};
pub use regression::{fit_history, recursive_residual_step, recursive_residuals, Dataset, HistoryFit, RlsState};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/recursive-residuals.md")]
    mod recursive_residuals {}
    #[doc = include_str!("../../../book/src/detectors.md")]
    mod detectors {}
    #[doc = include_str!("../../../book/src/critical-values.md")]
    mod critical_values {}
    #[doc = include_str!("../../../book/src/monitoring.md")]
    mod monitoring {}
    #[doc = include_str!("../../../book/src/break-dates.md")]
    mod break_dates {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
