mod common;

use common::*;
use hbdm::{
    canonicalize, full_ldm_gradient, full_ldm_nll, poisson_rate, EmbeddingState, GraphMode,
};
use proptest::prelude::*;

fn pairwise(state: &EmbeddingState) -> Vec<f64> {
    let n = state.rows();
    let mut out = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            let s: f64 = state
                .point(a)
                .iter()
                .zip(state.point(b))
                .map(|(x, y)| (x - y) * (x - y))
                .sum();
            out.push(s.sqrt());
        }
    }
    out
}

/// Random orthogonal matrix from Gram-Schmidt on Gaussian columns, with a
/// random reflection mixed in.
fn orthogonal(dim: usize, seed: u64) -> Vec<f64> {
    use rand_distr::{Distribution, StandardNormal};
    let mut r = rng(seed);
    let mut q: Vec<Vec<f64>> = Vec::new();
    while q.len() < dim {
        let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut r)).collect();
        for u in &q {
            let dot: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(u).for_each(|(a, b)| *a -= dot * b);
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-6 {
            q.push(v.into_iter().map(|a| a / norm).collect());
        }
    }
    q.concat()
}

fn transform(state: &EmbeddingState, q: &[f64], shift: &[f64]) -> EmbeddingState {
    let d = state.dim();
    let mut out = state.clone();
    let z = out.z_mut();
    for r in 0..state.rows() {
        let p = state.point(r);
        for i in 0..d {
            z[r * d + i] = (0..d).map(|k| q[i * d + k] * p[k]).sum::<f64>() + shift[i];
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn exact_likelihood_is_isometry_invariant(
        mode in prop::sample::select(MODES.to_vec()),
        n in 3usize..25,
        dim in 1usize..4,
        seed in any::<u64>(),
        shift in prop::collection::vec(-10.0f64..10.0, 3),
    ) {
        let g = random_graph(mode, n, n / 2 + 2, 0.2, seed);
        let state = random_state(g.layout(), dim, 1.0, false, seed ^ 1);
        let moved = transform(&state, &orthogonal(dim, seed ^ 2), &shift[..dim]);
        let (a, b) = (full_ldm_nll(&g, &state).unwrap(), full_ldm_nll(&g, &moved).unwrap());
        prop_assert!(rel(a, b) < 1e-9, "{} vs {}", a, b);
    }

    #[test]
    fn unipartite_rate_is_symmetric(n in 2usize..20, seed in any::<u64>()) {
        let g = random_graph(GraphMode::Undirected, n, 0, 0.3, seed);
        let state = random_state(g.layout(), 2, 1.0, false, seed);
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    let (a, b) = (poisson_rate(&state, i, j).unwrap(), poisson_rate(&state, j, i).unwrap());
                    prop_assert_eq!(a, b);
                    prop_assert!(a > 0.0);
                }
            }
        }
    }

    #[test]
    fn exact_gradient_matches_finite_differences(
        mode in prop::sample::select(MODES.to_vec()),
        n in 2usize..15,
        dim in 1usize..4,
        global in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let g = random_graph(mode, n, n.div_ceil(2) + 1, 0.3, seed);
        let state = random_state(g.layout(), dim, 1.0, global, seed ^ 7);
        let grad = full_ldm_gradient(&g, &state).unwrap().flatten();
        let p0 = state.params();
        let h = 1e-5;
        for i in 0..p0.len() {
            let f = |delta: f64| {
                let mut p = p0.clone();
                p[i] += delta;
                let mut st = state.clone();
                st.set_params(&p);
                full_ldm_nll(&g, &st).unwrap()
            };
            let fd = (f(h) - f(-h)) / (2.0 * h);
            prop_assert!(rel(grad[i], fd) < 1e-5, "coordinate {}: {} vs {}", i, grad[i], fd);
        }
    }

    #[test]
    fn canonicalize_is_idempotent_and_distance_preserving(
        mode in prop::sample::select(MODES.to_vec()),
        n in 3usize..30,
        dim in 1usize..4,
        seed in any::<u64>(),
    ) {
        let g = random_graph(mode, n, n / 2 + 2, 0.2, seed);
        let state = random_state(g.layout(), dim, 2.0, false, seed);
        let once = canonicalize(&state);
        let twice = canonicalize(&once);
        for (a, b) in pairwise(&state).iter().zip(pairwise(&once)) {
            prop_assert!((a - b).abs() < 1e-9);
        }
        for (a, b) in once.z().iter().zip(twice.z()) {
            prop_assert!((a - b).abs() < 1e-9);
        }
        prop_assert!(rel(full_ldm_nll(&g, &state).unwrap(), full_ldm_nll(&g, &once).unwrap()) < 1e-9);
    }
}

#[test]
fn translated_state_canonicalizes_identically() {
    let g = random_graph(GraphMode::Undirected, 12, 0, 0.3, 4);
    let state = random_state(g.layout(), 2, 1.0, false, 4);
    let moved = transform(&state, &[1.0, 0.0, 0.0, 1.0], &[5.0, 5.0]);
    let (a, b) = (canonicalize(&state), canonicalize(&moved));
    for (x, y) in a.z().iter().zip(b.z()) {
        assert!((x - y).abs() < 1e-9);
    }
}

#[test]
fn rate_matches_the_closed_form() {
    let layout = hbdm::Layout::Unipartite { n: 2 };
    let state =
        EmbeddingState::new(layout, 2, vec![0.0, 0.0, 3.0, 4.0], vec![0.5, 0.25], false).unwrap();
    let want = (0.75f64 - (25.0f64 + 1e-12).sqrt()).exp();
    assert!((poisson_rate(&state, 0, 1).unwrap() - want).abs() < 1e-15);
}
