//! Linear-time scans of the triangular (stacked) statistic under the linear
//! boundary `d(r) = 1 + 2r`.
//!
//! For a path `p_0..p_n` with abscissae `x_0 < … < x_n` the stacked
//! statistic is
//!
//! ```text
//! max_{a_min ≤ a < b ≤ n} ‖p_b − p_a‖_max / (1 + 2(x_b − x_a)).
//! ```
//!
//! For a fixed level `λ` the crossing condition `±(p_b − p_a) ≥ λ(1 + 2(x_b − x_a))`
//! separates into `g(b) − g(a) ≥ λ` with `g(i) = ±p_i − 2λx_i`, so a running
//! minimum answers it in one pass. The maximum itself is found by
//! fractional-programming iteration on `λ`: each pass returns the pair that
//! maximizes `N − λD`; its ratio strictly increases `λ` until no pair has
//! `N − λD > 0`, at which point `λ` is the exact maximum. The brute-force
//! double loop in [`crate::detectors::stacked_max_stat`] is the reference
//! these scans are tested against.

/// Location and value of the maximizing pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairMax {
    pub value: f64,
    /// Lower path index (`s − 1` in detector notation).
    pub a: usize,
    /// Upper path index (`t`).
    pub b: usize,
}

#[inline]
fn ratio<X: Fn(usize) -> f64>(path: &[f64], nu: usize, c: usize, sign: f64, a: usize, b: usize, x: &X) -> f64 {
    sign * (path[b * nu + c] - path[a * nu + c]) / (1.0 + 2.0 * (x(b) - x(a)))
}

/// Exact stacked maximum over `a_min ≤ a < b ≤ n`.
///
/// `path` is row-major `(n+1) × nu`; `x(i)` must be strictly increasing.
pub fn stacked_sup<X: Fn(usize) -> f64>(path: &[f64], nu: usize, a_min: usize, x: X) -> PairMax {
    let n = path.len() / nu - 1;
    let mut best = PairMax { value: 0.0, a: a_min, b: (a_min + 1).min(n) };
    if n <= a_min {
        return best;
    }
    let mut lambda = 0.0_f64;
    for _ in 0..256 {
        let mut round = best;
        for c in 0..nu {
            for sign in [1.0_f64, -1.0] {
                let g = |i: usize| sign * path[i * nu + c] - 2.0 * lambda * x(i);
                let mut min_g = g(a_min);
                let mut arg_min = a_min;
                let mut best_f = f64::NEG_INFINITY;
                let mut pair = (a_min, a_min + 1);
                for b in a_min + 1..=n {
                    let gb = g(b);
                    let f = gb - min_g;
                    if f > best_f {
                        best_f = f;
                        pair = (arg_min, b);
                    }
                    if gb < min_g {
                        min_g = gb;
                        arg_min = b;
                    }
                }
                let r = ratio(path, nu, c, sign, pair.0, pair.1, &x);
                if r > round.value {
                    round = PairMax { value: r, a: pair.0, b: pair.1 };
                }
            }
        }
        if round.value > lambda {
            lambda = round.value;
            best = round;
        } else {
            break;
        }
    }
    best
}

/// Smallest `b` at which some `a ∈ [a_min, b)` gives a ratio of at least
/// `lambda`, together with the smallest such `a`.
pub fn stacked_first_crossing<X: Fn(usize) -> f64>(
    path: &[f64],
    nu: usize,
    a_min: usize,
    x: X,
    lambda: f64,
) -> Option<(usize, usize)> {
    let n = path.len() / nu - 1;
    if n <= a_min {
        return None;
    }
    // running minima of g = ±p − 2λx, one per (coordinate, sign)
    let mut mins: Vec<f64> = (0..2 * nu)
        .map(|j| {
            let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
            sign * path[a_min * nu + j / 2] - 2.0 * lambda * x(a_min)
        })
        .collect();
    for b in a_min + 1..=n {
        let xb = x(b);
        let mut hit = false;
        for (j, m) in mins.iter_mut().enumerate() {
            let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
            let gb = sign * path[b * nu + j / 2] - 2.0 * lambda * xb;
            if gb - *m >= lambda {
                hit = true;
            }
            if gb < *m {
                *m = gb;
            }
        }
        if hit {
            let a = (a_min..b)
                .find(|&a| (0..nu).any(|c| ratio(path, nu, c, 1.0, a, b, &x).abs() >= lambda))
                .unwrap_or(a_min);
            return Some((b, a));
        }
    }
    None
}

/// `max_{b > a0} ‖p_b − p_{a0}‖_max / (1 + 2(x_b − x_{a0}))` and its argmax.
pub fn anchored_sup<X: Fn(usize) -> f64>(path: &[f64], nu: usize, a0: usize, x: X) -> PairMax {
    let n = path.len() / nu - 1;
    let mut best = PairMax { value: 0.0, a: a0, b: (a0 + 1).min(n) };
    for b in a0 + 1..=n {
        let d = 1.0 + 2.0 * (x(b) - x(a0));
        let v = (0..nu).map(|c| (path[b * nu + c] - path[a0 * nu + c]).abs()).fold(0.0, f64::max) / d;
        if v > best.value {
            best = PairMax { value: v, a: a0, b };
        }
    }
    best
}
