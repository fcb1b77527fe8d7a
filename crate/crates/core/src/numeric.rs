//! Small numeric helpers shared by the likelihood, clustering and training code.

/// Floor inside the Euclidean norm: `sqrt(|x - y|^2 + EPS_DIST^2)`.
pub const EPS_DIST: f64 = 1e-6;

/// Upper clamp on exponents before `exp` in likelihood evaluation.
pub const MAX_EXPONENT: f64 = 30.0;

/// Partial sums are formed over fixed-size chunks and then added in order,
/// so reductions do not depend on the number of worker threads.
pub const REDUCE_CHUNK: usize = 4096;

#[inline]
pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Plain Euclidean distance.
#[inline]
pub fn euclid(a: &[f64], b: &[f64]) -> f64 {
    sq_dist(a, b).sqrt()
}

/// Euclidean distance with the `EPS_DIST` floor; smooth everywhere.
#[inline]
pub fn soft_dist(a: &[f64], b: &[f64]) -> f64 {
    (sq_dist(a, b) + EPS_DIST * EPS_DIST).sqrt()
}

/// `exp(x)` with `x` clamped to `MAX_EXPONENT`. Returns the value and whether
/// the clamp was active (its derivative is then zero).
#[inline]
pub fn guarded_exp(x: f64) -> (f64, bool) {
    if x > MAX_EXPONENT {
        (MAX_EXPONENT.exp(), true)
    } else {
        (x.exp(), false)
    }
}

/// Deterministic ordered sum of per-chunk partials.
pub fn ordered_sum(parts: impl IntoIterator<Item = f64>) -> f64 {
    parts.into_iter().fold(0.0, |acc, x| acc + x)
}

/// SplitMix64 finalizer; used to derive independent RNG streams from a seed
/// and a path of integers.
#[inline]
pub fn mix_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Relative difference scaled by `max(1, |a|, |b|)`.
pub fn rel_diff(a: f64, b: f64) -> f64 {
    (a - b).abs() / 1f64.max(a.abs()).max(b.abs())
}

/// Natural-log based cluster count used for the first split and the leaf cap:
/// `max(2, round(ln n))`.
pub fn log_count(n: usize) -> usize {
    if n < 2 {
        return 2;
    }
    ((n as f64).ln().round() as usize).max(2)
}
