//! Reproducible random streams for Monte Carlo work.
//!
//! Every replication draws from its own ChaCha8 stream. The 256-bit key is
//! derived from `(master seed, domain)` and the 64-bit stream id is the
//! replication index, so the `i`-th deviate of replication `r` is a pure
//! function of `(seed, domain, r, i)`. Results therefore never depend on how
//! replications are scheduled across worker threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Generator handed to every replication.
pub type McRng = ChaCha8Rng;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stable 64-bit tag for a domain label (FNV-1a).
pub fn domain_tag(label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Random stream for replication `rep` of the experiment identified by
/// `(seed, domain)`.
pub fn stream(seed: u64, domain: u64, rep: u64) -> McRng {
    let mut state = seed ^ domain.rotate_left(17);
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(rep);
    rng
}

/// Runs `f(rep, scratch)` for `rep in 0..reps`, returning results in
/// replication order.
///
/// `workers = None` uses the global rayon pool; `Some(n)` runs inside a
/// dedicated pool of `n` threads. Output is identical either way.
pub fn par_reps<T, S, I, F>(reps: usize, workers: Option<usize>, init: I, f: F) -> Vec<T>
where
    T: Send,
    I: Fn() -> S + Sync + Send,
    F: Fn(u64, &mut S) -> T + Sync + Send,
{
    let run = || {
        (0..reps as u64)
            .into_par_iter()
            .map_init(&init, |scratch, rep| f(rep, scratch))
            .collect::<Vec<T>>()
    };
    match workers {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build() {
            Ok(pool) => pool.install(run),
            Err(_) => run(),
        },
        None => run(),
    }
}
