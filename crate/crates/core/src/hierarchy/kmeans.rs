//! k-means under the (unsquared) Euclidean norm.
//!
//! Minimises `J(r, mu) = sum_i ||z_i - mu_{r_i}||` by majorize-minimize on the
//! auxiliary function `J+(phi, r, mu) = sum_i ||z_i - mu||^2 / (2 phi_i) + phi_i / 2`,
//! which is tight at `phi_i = ||z_i - mu_{r_i}||`. Each cycle assigns points
//! to their nearest centroid, sets `phi` to the current distances and moves
//! each centroid to the `1/phi`-weighted mean of its members (a Weiszfeld
//! step). `J` never increases across these steps.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{HbdmError, Result};
use crate::numeric::{euclid, sq_dist};

/// Floor on the auxiliary distances; caps the Weiszfeld weight `1/phi`.
pub const EPS_PHI: f64 = 1e-10;

pub const DEFAULT_MAX_ITERS: usize = 15;

#[derive(Debug, Clone, PartialEq)]
pub struct KmeansState {
    pub k: usize,
    pub dim: usize,
    pub assignments: Vec<usize>,
    /// `k x dim`, row-major.
    pub centroids: Vec<f64>,
    /// `max(||z_i - mu_{r_i}||, EPS_PHI)` at the returned centroids.
    pub phi: Vec<f64>,
    pub objective: f64,
    /// `J` after every assignment step and every centroid step, in order.
    pub history: Vec<f64>,
    pub iterations: usize,
}

impl KmeansState {
    pub fn centroid(&self, c: usize) -> &[f64] {
        &self.centroids[c * self.dim..(c + 1) * self.dim]
    }
}

#[inline]
fn row(points: &[f64], dim: usize, i: usize) -> &[f64] {
    &points[i * dim..(i + 1) * dim]
}

/// `J(r, mu)`.
pub fn objective(points: &[f64], dim: usize, assignments: &[usize], centroids: &[f64]) -> f64 {
    assignments
        .iter()
        .enumerate()
        .map(|(i, &c)| euclid(row(points, dim, i), row(centroids, dim, c)))
        .sum()
}

/// `J+(phi, r, mu)`.
pub fn aux_objective(
    points: &[f64],
    dim: usize,
    assignments: &[usize],
    centroids: &[f64],
    phi: &[f64],
) -> f64 {
    assignments
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            sq_dist(row(points, dim, i), row(centroids, dim, c)) / (2.0 * phi[i]) + 0.5 * phi[i]
        })
        .sum()
}

/// Evaluates `J` and `J+` at `phi* = ||z_i - mu_{r_i}||` (floored).
pub fn aux_identity_check(points: &[f64], dim: usize, state: &KmeansState) -> (f64, f64) {
    let phi_star: Vec<f64> = state
        .assignments
        .iter()
        .enumerate()
        .map(|(i, &c)| euclid(row(points, dim, i), state.centroid(c)).max(EPS_PHI))
        .collect();
    (
        objective(points, dim, &state.assignments, &state.centroids),
        aux_objective(points, dim, &state.assignments, &state.centroids, &phi_star),
    )
}

/// Nearest centroid; ties go to the lowest index.
fn nearest(p: &[f64], centroids: &[f64], dim: usize, k: usize) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for c in 0..k {
        let d = sq_dist(p, row(centroids, dim, c));
        if d < best_d {
            best = c;
            best_d = d;
        }
    }
    best
}

/// k-means++ seeding with probabilities proportional to unsquared distances.
fn seed_centroids(
    points: &[f64],
    dim: usize,
    n: usize,
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let mut chosen = vec![false; n];
    let mut centroids = Vec::with_capacity(k * dim);
    let first = rng.random_range(0..n);
    chosen[first] = true;
    centroids.extend_from_slice(row(points, dim, first));
    let mut mind: Vec<f64> = (0..n)
        .map(|i| euclid(row(points, dim, i), row(points, dim, first)))
        .collect();
    for _ in 1..k {
        let total: f64 = mind.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = None;
            for (i, &d) in mind.iter().enumerate() {
                if d > 0.0 {
                    pick = Some(i);
                    if u < d {
                        break;
                    }
                    u -= d;
                }
            }
            pick.unwrap()
        } else {
            // All remaining points coincide with a chosen centre.
            (0..n).find(|&i| !chosen[i]).unwrap()
        };
        chosen[pick] = true;
        let p = row(points, dim, pick);
        centroids.extend_from_slice(p);
        for (i, m) in mind.iter_mut().enumerate() {
            *m = m.min(euclid(row(points, dim, i), p));
        }
    }
    centroids
}

/// Re-seeds every empty cluster at the point farthest from its own centroid,
/// taken from clusters that keep at least one member.
fn repair_empty(
    points: &[f64],
    dim: usize,
    k: usize,
    assignments: &mut [usize],
    centroids: &mut [f64],
) {
    let mut counts = vec![0usize; k];
    for &c in assignments.iter() {
        counts[c] += 1;
    }
    for c in 0..k {
        if counts[c] > 0 {
            continue;
        }
        let mut best: Option<(usize, f64)> = None;
        for (i, &a) in assignments.iter().enumerate() {
            if counts[a] < 2 {
                continue;
            }
            let d = sq_dist(row(points, dim, i), row(centroids, dim, a));
            if best.is_none_or(|(_, bd)| d > bd) {
                best = Some((i, d));
            }
        }
        let (i, _) = best.expect("n >= k guarantees a donor cluster");
        counts[assignments[i]] -= 1;
        assignments[i] = c;
        counts[c] = 1;
        centroids[c * dim..(c + 1) * dim].copy_from_slice(row(points, dim, i));
    }
}

fn phi_of(points: &[f64], dim: usize, assignments: &[usize], centroids: &[f64]) -> Vec<f64> {
    assignments
        .iter()
        .enumerate()
        .map(|(i, &c)| euclid(row(points, dim, i), row(centroids, dim, c)).max(EPS_PHI))
        .collect()
}

/// `1/phi`-weighted mean of each cluster.
fn weiszfeld_update(
    points: &[f64],
    dim: usize,
    k: usize,
    assignments: &[usize],
    phi: &[f64],
) -> Vec<f64> {
    let mut num = vec![0.0; k * dim];
    let mut den = vec![0.0; k];
    for (i, &c) in assignments.iter().enumerate() {
        let w = 1.0 / phi[i];
        den[c] += w;
        for (acc, x) in num[c * dim..(c + 1) * dim]
            .iter_mut()
            .zip(row(points, dim, i))
        {
            *acc += w * x;
        }
    }
    for c in 0..k {
        num[c * dim..(c + 1) * dim]
            .iter_mut()
            .for_each(|v| *v /= den[c]);
    }
    num
}

/// Euclidean-norm k-means on `n = points.len() / dim` points.
pub fn euclidean_kmeans(
    points: &[f64],
    dim: usize,
    k: usize,
    seed: u64,
    max_iters: usize,
) -> Result<KmeansState> {
    if dim == 0 {
        return Err(HbdmError::InvalidArgument(
            "dimension must be at least 1".into(),
        ));
    }
    let n = points.len() / dim;
    if k == 0 {
        return Err(HbdmError::InvalidArgument("k must be at least 1".into()));
    }
    if n < k {
        return Err(HbdmError::InvalidArgument(format!(
            "{n} points cannot form {k} clusters"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = seed_centroids(points, dim, n, k, &mut rng);
    let mut assignments = vec![usize::MAX; n];
    let mut history = Vec::new();
    let mut iterations = 0;

    for it in 0..max_iters.max(1) {
        iterations = it + 1;
        let next: Vec<usize> = (0..n)
            .map(|i| nearest(row(points, dim, i), &centroids, dim, k))
            .collect();
        let changed = next != assignments;
        assignments = next;
        repair_empty(points, dim, k, &mut assignments, &mut centroids);
        history.push(objective(points, dim, &assignments, &centroids));
        if !changed {
            break;
        }
        let phi = phi_of(points, dim, &assignments, &centroids);
        centroids = weiszfeld_update(points, dim, k, &assignments, &phi);
        history.push(objective(points, dim, &assignments, &centroids));
    }

    let phi = phi_of(points, dim, &assignments, &centroids);
    let objective = objective(points, dim, &assignments, &centroids);
    Ok(KmeansState {
        k,
        dim,
        assignments,
        centroids,
        phi,
        objective,
        history,
        iterations,
    })
}
