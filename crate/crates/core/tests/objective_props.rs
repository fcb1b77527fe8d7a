mod common;

use common::*;
use hbdm::{
    build_tree, hbdm_gradient, hbdm_nll, ClusterTree, EmbeddingState, Graph, GraphMode,
    HbdmObjective, Layout, TreeConfig,
};
use proptest::prelude::*;

fn d(a: &[f64], b: &[f64]) -> f64 {
    (a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() + 1e-12).sqrt()
}

/// Unipartite hierarchical likelihood written out term by term.
fn written_out(g: &Graph, state: &EmbeddingState, tree: &ClusterTree) -> f64 {
    let b = state.effects();
    let mut link = 0.0;
    for &(i, j) in g.edges() {
        link += b[i] + b[j] - d(state.point(i), state.point(j));
    }
    let mut leaf = 0.0;
    for l in tree.leaves() {
        for (x, &i) in l.members.iter().enumerate() {
            for &j in &l.members[x + 1..] {
                leaf += (b[i] + b[j] - d(state.point(i), state.point(j))).exp();
            }
        }
    }
    let mut blocks = 0.0;
    for groups in tree.sibling_groups() {
        for group in groups {
            for (x, &k) in group.iter().enumerate() {
                for &kk in &group[x + 1..] {
                    let s = |c: usize| {
                        tree.node(c)
                            .members
                            .iter()
                            .map(|&m| b[m].exp())
                            .sum::<f64>()
                    };
                    let mu = |c: usize| tree.centroid_for(c, state.z());
                    blocks += (-d(&mu(k), &mu(kk))).exp() * s(k) * s(kk);
                }
            }
        }
    }
    -(link - leaf - blocks)
}

fn instance(
    mode: GraphMode,
    n: usize,
    dim: usize,
    global: bool,
    seed: u64,
) -> (Graph, EmbeddingState, ClusterTree) {
    let g = random_graph(mode, n, n / 2 + 2, 0.15, seed);
    let state = random_state(g.layout(), dim, 1.5, global, seed ^ 3);
    let tree = build_tree(state.z(), dim, g.layout(), &TreeConfig::with_seed(seed)).unwrap();
    (g, state, tree)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn report_parts_add_up_and_are_non_negative(
        mode in prop::sample::select(MODES.to_vec()),
        n in 4usize..80,
        dim in 1usize..4,
        seed in any::<u64>(),
    ) {
        let (g, state, tree) = instance(mode, n, dim, false, seed);
        let r = hbdm_nll(&g, &state, &tree).unwrap();
        let blocks: f64 = r.block_terms_per_level.iter().sum();
        prop_assert!(rel(r.total_nll, -(r.link_term - r.leaf_analytic_term - blocks)) < 1e-12);
        prop_assert!(r.leaf_analytic_term >= 0.0);
        prop_assert!(r.block_terms_per_level.iter().all(|&t| t >= 0.0));
        prop_assert_eq!(r.block_terms_per_level.len(), tree.height());
    }

    #[test]
    fn unipartite_objective_matches_the_written_out_sum(n in 4usize..80, dim in 1usize..4, seed in any::<u64>()) {
        let (g, state, tree) = instance(GraphMode::Undirected, n, dim, false, seed);
        let got = hbdm_nll(&g, &state, &tree).unwrap().total_nll;
        prop_assert!(rel(got, written_out(&g, &state, &tree)) < 1e-9);
    }

    #[test]
    fn tied_effects_reduce_to_the_global_bias_form(n in 4usize..60, bias in -2.0f64..1.0, seed in any::<u64>()) {
        let (g, mut state, tree) = instance(GraphMode::Undirected, n, 2, true, seed);
        state.set_global_bias(bias);
        let got = hbdm_nll(&g, &state, &tree).unwrap().total_nll;
        let mut link = 0.0;
        for &(i, j) in g.edges() {
            link += bias - d(state.point(i), state.point(j));
        }
        let mut rest = 0.0;
        for l in tree.leaves() {
            for (x, &i) in l.members.iter().enumerate() {
                for &j in &l.members[x + 1..] {
                    rest += (bias - d(state.point(i), state.point(j))).exp();
                }
            }
        }
        for groups in tree.sibling_groups() {
            for group in groups {
                for (x, &k) in group.iter().enumerate() {
                    for &kk in &group[x + 1..] {
                        let (a, b) = (tree.node(k), tree.node(kk));
                        let dist = d(&tree.centroid_for(k, state.z()), &tree.centroid_for(kk, state.z()));
                        rest += (bias - dist).exp() * (a.members.len() * b.members.len()) as f64;
                    }
                }
            }
        }
        prop_assert!(rel(got, rest - link) < 1e-9);
        let per_row = EmbeddingState::new(state.layout(), 2, state.z().to_vec(), state.effects().to_vec(), false).unwrap();
        prop_assert!(rel(got, hbdm_nll(&g, &per_row, &tree).unwrap().total_nll) < 1e-12);
        let tied = hbdm_gradient(&g, &state, &tree).unwrap();
        let free = hbdm_gradient(&g, &per_row, &tree).unwrap();
        prop_assert!(rel(tied.deffects[0], 0.5 * free.deffects.iter().sum::<f64>()) < 1e-9);
    }

    #[test]
    fn separating_siblings_lowers_their_block_term(
        n in 6usize..40,
        gap in 0.1f64..5.0,
        push in 0.01f64..3.0,
        seed in any::<u64>(),
    ) {
        let layout = Layout::Unipartite { n };
        let base = random_state(layout, 2, 0.5, false, seed);
        let assignment: Vec<usize> = (0..n).map(|i| usize::from(i >= n / 2)).collect();
        let shifted = |offset: f64| {
            let mut s = base.clone();
            let z = s.z_mut();
            for i in n / 2..n {
                z[2 * i] += offset;
            }
            s
        };
        let near = shifted(gap);
        let far = shifted(gap + push);
        let tree = ClusterTree::from_assignment(near.z(), 2, layout, &assignment).unwrap();
        let g = Graph::from_edges(GraphMode::Undirected, n, 0, Vec::new()).unwrap();
        let obj = HbdmObjective::new(&g, &tree).unwrap();
        let (a, b) = (obj.nll(&near).unwrap(), obj.nll(&far).unwrap());
        prop_assert!(b.block_terms_per_level[0] < a.block_terms_per_level[0]);
        prop_assert!(rel(a.leaf_analytic_term, b.leaf_analytic_term) < 1e-12);
    }

    #[test]
    fn evaluation_is_thread_count_invariant(
        mode in prop::sample::select(MODES.to_vec()),
        n in 4usize..120,
        seed in any::<u64>(),
    ) {
        let (g, state, tree) = instance(mode, n, 2, false, seed);
        let run = |threads: usize| {
            rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(|| {
                let obj = HbdmObjective::new(&g, &tree).unwrap();
                let (r, grad) = obj.nll_and_gradient(&state).unwrap();
                (r.total_nll.to_bits(), grad.flatten().iter().map(|v| v.to_bits()).collect::<Vec<_>>())
            })
        };
        prop_assert_eq!(run(1), run(4));
    }
}

#[test]
fn flat_partition_of_six_nodes_matches_the_block_formula() {
    let layout = Layout::Unipartite { n: 6 };
    let z = vec![0.0, 0.0, 0.5, 0.1, 3.0, 3.0, 3.2, 2.6, -2.0, 4.0, -2.5, 3.5];
    let effects = vec![0.1, -0.2, 0.3, 0.0, -0.1, 0.2];
    let state = EmbeddingState::new(layout, 2, z, effects.clone(), false).unwrap();
    let g = Graph::from_edges(
        GraphMode::Undirected,
        6,
        0,
        [(0, 1), (2, 3), (4, 5), (1, 2)],
    )
    .unwrap();
    let tree = ClusterTree::from_assignment(state.z(), 2, layout, &[0, 0, 1, 1, 2, 2]).unwrap();
    let got = hbdm_nll(&g, &state, &tree).unwrap();

    let p = |i: usize| state.point(i);
    let mut link = 0.0;
    for (i, j) in [(0, 1), (2, 3), (4, 5), (1, 2)] {
        link += effects[i] + effects[j] - d(p(i), p(j));
    }
    let mut leaf = 0.0;
    for (i, j) in [(0, 1), (2, 3), (4, 5)] {
        leaf += (effects[i] + effects[j] - d(p(i), p(j))).exp();
    }
    let s = |k: usize| (effects[2 * k].exp()) + (effects[2 * k + 1].exp());
    let mu = |k: usize| tree.centroid_for(k + 1, state.z());
    let mut block = 0.0;
    for (a, b) in [(0, 1), (0, 2), (1, 2)] {
        block += (-d(&mu(a), &mu(b))).exp() * s(a) * s(b);
    }
    assert!(rel(got.link_term, link) < 1e-12);
    assert!(rel(got.leaf_analytic_term, leaf) < 1e-12);
    assert!(rel(got.block_terms_per_level[0], block) < 1e-12);
    assert!(rel(got.total_nll, -(link - leaf - block)) < 1e-12);
}

#[test]
fn zero_angle_rotation_is_identity() {
    let (g, state, tree) = instance(GraphMode::Undirected, 30, 2, false, 8);
    let leaf = tree.leaves().next().unwrap().id;
    let (a, b) = hbdm::rotation_sensitivity(&g, &state, &tree, leaf, 0.0).unwrap();
    assert_eq!(a, b);
}
