//! Tabulated critical values `λ_α` for the linear boundary `d(r) = 1 + 2r`.
//!
//! Values were obtained by simulating the limiting processes on a grid of
//! 10,000 points with 100,000 replications. [`crate::limit_sim`] regenerates
//! any entry, including keys that are not tabulated here.

use crate::detectors::{DetectorKind, Horizon};
use crate::error::{CusumError, Result};

/// Significance levels of [`RETRO_Q`] and [`RETRO_SBQ`] columns.
pub const RETRO_ALPHAS: [f64; 5] = [0.20, 0.10, 0.05, 0.025, 0.01];

/// Forward and backward retrospective detectors, rows `ν = 1..=8`.
pub const RETRO_Q: [[f64; 5]; 8] = [
    [0.734, 0.847, 0.945, 1.034, 1.143],
    [0.839, 0.941, 1.032, 1.115, 1.219],
    [0.895, 0.993, 1.081, 1.163, 1.260],
    [0.933, 1.029, 1.114, 1.192, 1.287],
    [0.962, 1.056, 1.139, 1.216, 1.307],
    [0.985, 1.077, 1.160, 1.235, 1.323],
    [1.005, 1.095, 1.176, 1.249, 1.338],
    [1.021, 1.110, 1.189, 1.261, 1.349],
];

/// Stacked backward retrospective detector, rows `ν = 1..=8`.
pub const RETRO_SBQ: [[f64; 5]; 8] = [
    [1.018, 1.113, 1.198, 1.278, 1.374],
    [1.107, 1.196, 1.277, 1.352, 1.442],
    [1.156, 1.244, 1.321, 1.392, 1.481],
    [1.190, 1.275, 1.350, 1.419, 1.506],
    [1.216, 1.299, 1.372, 1.441, 1.526],
    [1.237, 1.317, 1.388, 1.457, 1.541],
    [1.253, 1.333, 1.404, 1.471, 1.556],
    [1.268, 1.347, 1.418, 1.483, 1.566],
];

/// Significance levels of the [`MON_SBQ`] columns.
pub const MON_ALPHAS: [f64; 3] = [0.10, 0.05, 0.01];

/// Horizons of the [`MON_SBQ`] rows; `f64::INFINITY` is the open-ended case.
pub const MON_HORIZONS: [f64; 11] = [1.2, 1.4, 1.6, 1.8, 2.0, 3.0, 4.0, 6.0, 8.0, 10.0, f64::INFINITY];

/// Stacked backward monitoring detector, indexed `[ν − 1][horizon][α]`.
pub const MON_SBQ: [[[f64; 3]; 11]; 8] = [
    [
        [0.782, 0.859, 1.024],
        [0.941, 1.030, 1.208],
        [1.026, 1.113, 1.292],
        [1.077, 1.162, 1.344],
        [1.113, 1.198, 1.374],
        [1.211, 1.293, 1.462],
        [1.262, 1.339, 1.500],
        [1.316, 1.390, 1.544],
        [1.346, 1.419, 1.569],
        [1.367, 1.440, 1.588],
        [1.450, 1.514, 1.648],
    ],
    [
        [0.859, 0.935, 1.092],
        [1.028, 1.111, 1.277],
        [1.111, 1.192, 1.365],
        [1.161, 1.244, 1.411],
        [1.196, 1.277, 1.442],
        [1.291, 1.366, 1.524],
        [1.336, 1.410, 1.564],
        [1.387, 1.460, 1.606],
        [1.417, 1.486, 1.629],
        [1.437, 1.503, 1.644],
        [1.512, 1.573, 1.703],
    ],
    [
        [0.902, 0.975, 1.129],
        [1.076, 1.156, 1.320],
        [1.158, 1.238, 1.406],
        [1.208, 1.286, 1.452],
        [1.244, 1.321, 1.481],
        [1.334, 1.407, 1.558],
        [1.378, 1.450, 1.599],
        [1.428, 1.496, 1.638],
        [1.456, 1.522, 1.661],
        [1.475, 1.540, 1.677],
        [1.547, 1.606, 1.736],
    ],
    [
        [0.932, 1.003, 1.152],
        [1.108, 1.185, 1.345],
        [1.189, 1.269, 1.432],
        [1.240, 1.317, 1.476],
        [1.275, 1.350, 1.506],
        [1.363, 1.436, 1.582],
        [1.407, 1.478, 1.621],
        [1.456, 1.522, 1.660],
        [1.483, 1.548, 1.686],
        [1.500, 1.565, 1.703],
        [1.570, 1.629, 1.760],
    ],
    [
        [0.954, 1.023, 1.170],
        [1.133, 1.208, 1.366],
        [1.214, 1.293, 1.452],
        [1.265, 1.340, 1.496],
        [1.299, 1.372, 1.526],
        [1.386, 1.457, 1.601],
        [1.429, 1.497, 1.638],
        [1.476, 1.541, 1.680],
        [1.503, 1.567, 1.706],
        [1.520, 1.584, 1.718],
        [1.589, 1.647, 1.775],
    ],
    [
        [0.972, 1.041, 1.186],
        [1.152, 1.225, 1.381],
        [1.235, 1.311, 1.466],
        [1.283, 1.357, 1.511],
        [1.317, 1.388, 1.541],
        [1.404, 1.472, 1.615],
        [1.446, 1.513, 1.651],
        [1.492, 1.557, 1.696],
        [1.519, 1.582, 1.718],
        [1.536, 1.599, 1.732],
        [1.604, 1.661, 1.788],
    ],
    [
        [0.987, 1.054, 1.198],
        [1.167, 1.241, 1.396],
        [1.251, 1.325, 1.477],
        [1.300, 1.372, 1.525],
        [1.333, 1.404, 1.556],
        [1.420, 1.487, 1.629],
        [1.461, 1.527, 1.665],
        [1.507, 1.571, 1.709],
        [1.533, 1.596, 1.728],
        [1.551, 1.612, 1.744],
        [1.617, 1.673, 1.799],
    ],
    [
        [1.000, 1.065, 1.206],
        [1.181, 1.253, 1.409],
        [1.265, 1.339, 1.488],
        [1.315, 1.385, 1.537],
        [1.347, 1.418, 1.566],
        [1.433, 1.500, 1.640],
        [1.473, 1.539, 1.679],
        [1.519, 1.583, 1.718],
        [1.545, 1.607, 1.739],
        [1.562, 1.623, 1.752],
        [1.627, 1.683, 1.807],
    ],
];

/// Forward monitoring detector with an open-ended horizon at 5%, `ν = 1, 2`.
pub const MON_Q_INF_5PCT: [f64; 2] = [0.957, 1.044];

fn position(xs: &[f64], v: f64) -> Option<usize> {
    xs.iter().position(|x| (x - v).abs() < 1e-9 || (x.is_infinite() && v.is_infinite()))
}

/// Looks up `λ_α` for `(kind, ν, α, horizon)`.
///
/// Forward monitoring up to `m = 2` has the same limit as the retrospective
/// forward test and is served from [`RETRO_Q`].
pub fn lookup(kind: DetectorKind, nu: usize, alpha: f64, horizon: Horizon) -> Result<f64> {
    let missing = || CusumError::UnknownCriticalValue(format!("{kind}, ν = {nu}, α = {alpha}, horizon = {horizon}"));
    if !(1..=8).contains(&nu) {
        return Err(missing());
    }
    let row = nu - 1;
    match (kind, horizon) {
        (DetectorKind::Forward | DetectorKind::Backward, Horizon::Retrospective) => {
            position(&RETRO_ALPHAS, alpha).map(|j| RETRO_Q[row][j]).ok_or_else(missing)
        }
        (DetectorKind::Stacked, Horizon::Retrospective) => {
            position(&RETRO_ALPHAS, alpha).map(|j| RETRO_SBQ[row][j]).ok_or_else(missing)
        }
        (DetectorKind::Stacked, Horizon::Finite(m)) => {
            let i = position(&MON_HORIZONS, m).ok_or_else(missing)?;
            position(&MON_ALPHAS, alpha).map(|j| MON_SBQ[row][i][j]).ok_or_else(missing)
        }
        (DetectorKind::Stacked, Horizon::Infinite) => {
            position(&MON_ALPHAS, alpha).map(|j| MON_SBQ[row][10][j]).ok_or_else(missing)
        }
        (DetectorKind::Forward, Horizon::Finite(m)) if (m - 2.0).abs() < 1e-9 => {
            position(&RETRO_ALPHAS, alpha).map(|j| RETRO_Q[row][j]).ok_or_else(missing)
        }
        (DetectorKind::Forward, Horizon::Infinite) if (alpha - 0.05).abs() < 1e-9 && nu <= 2 => {
            Ok(MON_Q_INF_5PCT[row])
        }
        _ => Err(missing()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_entries() {
        assert_eq!(lookup(DetectorKind::Forward, 1, 0.05, Horizon::Retrospective).unwrap(), 0.945);
        assert_eq!(lookup(DetectorKind::Backward, 2, 0.01, Horizon::Retrospective).unwrap(), 1.219);
        assert_eq!(lookup(DetectorKind::Stacked, 1, 0.05, Horizon::Retrospective).unwrap(), 1.198);
        assert_eq!(lookup(DetectorKind::Stacked, 1, 0.05, Horizon::Finite(4.0)).unwrap(), 1.339);
        assert_eq!(lookup(DetectorKind::Stacked, 1, 0.05, Horizon::Infinite).unwrap(), 1.514);
        assert_eq!(lookup(DetectorKind::Stacked, 8, 0.01, Horizon::Infinite).unwrap(), 1.807);
        assert_eq!(lookup(DetectorKind::Forward, 1, 0.05, Horizon::Infinite).unwrap(), 0.957);
        assert_eq!(lookup(DetectorKind::Forward, 2, 0.05, Horizon::Infinite).unwrap(), 1.044);
    }

    #[test]
    fn missing_entries() {
        assert!(lookup(DetectorKind::Forward, 3, 0.05, Horizon::Infinite).is_err());
        assert!(lookup(DetectorKind::Stacked, 9, 0.05, Horizon::Retrospective).is_err());
        assert!(lookup(DetectorKind::Stacked, 1, 0.2, Horizon::Infinite).is_err());
        assert!(lookup(DetectorKind::Stacked, 1, 0.05, Horizon::Finite(5.0)).is_err());
        assert!(lookup(DetectorKind::Backward, 1, 0.05, Horizon::Infinite).is_err());
    }

    #[test]
    fn monitoring_at_two_matches_retrospective() {
        for nu in 0..8 {
            for (j, &a) in MON_ALPHAS.iter().enumerate() {
                let r = position(&RETRO_ALPHAS, a).unwrap();
                assert_eq!(MON_SBQ[nu][4][j], RETRO_SBQ[nu][r]);
            }
        }
    }

    #[test]
    fn tables_are_monotone() {
        for nu in 0..8 {
            for j in 1..5 {
                assert!(RETRO_Q[nu][j] > RETRO_Q[nu][j - 1]);
                assert!(RETRO_SBQ[nu][j] > RETRO_SBQ[nu][j - 1]);
            }
            for i in 0..11 {
                assert!(MON_SBQ[nu][i][1] > MON_SBQ[nu][i][0] && MON_SBQ[nu][i][2] > MON_SBQ[nu][i][1]);
                if i > 0 {
                    assert!(MON_SBQ[nu][i][1] > MON_SBQ[nu][i - 1][1]);
                }
                if nu > 0 {
                    assert!(MON_SBQ[nu][i][1] > MON_SBQ[nu - 1][i][1]);
                }
            }
            if nu > 0 {
                assert!(RETRO_Q[nu][2] > RETRO_Q[nu - 1][2]);
                assert!(RETRO_SBQ[nu][2] > RETRO_SBQ[nu - 1][2]);
            }
        }
    }
}
