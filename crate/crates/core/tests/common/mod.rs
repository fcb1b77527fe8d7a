#![allow(dead_code)]

use hbdm::{EmbeddingState, Graph, GraphMode, Layout};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub const MODES: [GraphMode; 3] = [
    GraphMode::Undirected,
    GraphMode::Directed,
    GraphMode::Bipartite,
];

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Erdos-Renyi style graph over every modelled dyad with edge probability `p`.
pub fn random_graph(mode: GraphMode, n1: usize, n2: usize, p: f64, seed: u64) -> Graph {
    let mut r = rng(seed);
    let limit2 = if mode == GraphMode::Bipartite { n2 } else { n1 };
    let mut edges = Vec::new();
    for i in 0..n1 {
        for j in 0..limit2 {
            let ok = match mode {
                GraphMode::Undirected => i < j,
                GraphMode::Directed => i != j,
                GraphMode::Bipartite => true,
            };
            if ok && r.random_bool(p) {
                edges.push((i, j));
            }
        }
    }
    Graph::from_edges(mode, n1, n2, edges).unwrap()
}

/// Gaussian coordinates and effects; a shared effect in global-bias mode.
pub fn random_state(
    layout: Layout,
    dim: usize,
    scale: f64,
    global_bias: bool,
    seed: u64,
) -> EmbeddingState {
    let mut r = rng(seed);
    let normal = Normal::new(0.0, scale).unwrap();
    let rows = layout.rows();
    let z: Vec<f64> = (0..rows * dim).map(|_| normal.sample(&mut r)).collect();
    let effects: Vec<f64> = if global_bias {
        vec![r.random_range(-0.5..0.5); rows]
    } else {
        (0..rows).map(|_| r.random_range(-0.5..0.5)).collect()
    };
    EmbeddingState::new(layout, dim, z, effects, global_bias).unwrap()
}

fn dist(state: &EmbeddingState, a: usize, b: usize) -> f64 {
    let s: f64 = state
        .point(a)
        .iter()
        .zip(state.point(b))
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    (s + 1e-12).sqrt()
}

/// Row pairs `(a, b)`, `a < b`, that the likelihood models.
pub fn modelled_pairs(layout: Layout) -> Vec<(usize, usize)> {
    let n = layout.rows();
    let mut out = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            if layout.is_pair(a, b) {
                out.push((a, b));
            }
        }
    }
    out
}

/// Poisson negative log-likelihood summed pair by pair.
pub fn naive_nll(g: &Graph, state: &EmbeddingState) -> f64 {
    let layout = g.layout();
    let mut total = 0.0;
    for (a, b) in modelled_pairs(layout) {
        let x = state.effects()[a] + state.effects()[b] - dist(state, a, b);
        total += x.min(30.0).exp();
    }
    for (a, b) in g.row_edges() {
        total -= state.effects()[a] + state.effects()[b] - dist(state, a, b);
    }
    total
}

/// Gradient of [`naive_nll`] in the free-parameter layout of the state.
pub fn naive_gradient(g: &Graph, state: &EmbeddingState) -> Vec<f64> {
    let layout = g.layout();
    let d = state.dim();
    let rows = layout.rows();
    let mut dz = vec![0.0; rows * d];
    let mut db = vec![0.0; rows];
    let mut add = |a: usize, b: usize, w: f64| {
        let r = dist(state, a, b);
        for k in 0..d {
            let u = (state.point(a)[k] - state.point(b)[k]) / r;
            dz[a * d + k] -= w * u;
            dz[b * d + k] += w * u;
        }
        db[a] += w;
        db[b] += w;
    };
    for (a, b) in modelled_pairs(layout) {
        let x = state.effects()[a] + state.effects()[b] - dist(state, a, b);
        if x <= 30.0 {
            add(a, b, x.exp());
        }
    }
    for (a, b) in g.row_edges() {
        add(a, b, -1.0);
    }
    if state.global_bias_mode() {
        dz.push(0.5 * db.iter().sum::<f64>());
    } else {
        dz.extend(db);
    }
    dz
}

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / 1f64.max(a.abs()).max(b.abs())
}

/// Row counts `(n1, n2)` for a mode with `n` nodes on the first side.
pub fn sides(mode: GraphMode, n: usize, r: &mut ChaCha8Rng) -> (usize, usize) {
    match mode {
        GraphMode::Bipartite => (n, r.random_range(3..=n)),
        _ => (n, 0),
    }
}

/// Ordinary least squares of `y` on `x`: slope and R^2.
pub fn ols(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let syy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    let slope = sxy / sxx;
    (slope, sxy * sxy / (sxx * syy))
}
