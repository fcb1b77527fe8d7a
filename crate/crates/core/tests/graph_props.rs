mod common;

use std::io::Write;

use hbdm::{load_edge_list, Graph, GraphMode};
use proptest::prelude::*;

fn write_lines(lines: &[String]) -> tempfile::NamedTempFile {
    let mut f = tempfile::NamedTempFile::new().unwrap();
    for l in lines {
        writeln!(f, "{l}").unwrap();
    }
    f.flush().unwrap();
    f
}

fn edge_lines() -> impl Strategy<Value = Vec<(u8, u8)>> {
    prop::collection::vec((0u8..20, 0u8..20), 1..60)
        .prop_filter("needs a non-loop edge", |v| v.iter().any(|(a, b)| a != b))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn line_order_does_not_change_the_graph(
        pairs in edge_lines(),
        mode in prop::sample::select(common::MODES.to_vec()),
        seed in any::<u64>(),
    ) {
        let lines: Vec<String> = pairs
            .iter()
            .map(|(a, b)| match mode {
                GraphMode::Bipartite => format!("u{a}\tv{b}"),
                _ => format!("n{a} n{b}"),
            })
            .collect();
        let mut shuffled = lines.clone();
        let mut r = common::rng(seed);
        rand::seq::SliceRandom::shuffle(shuffled.as_mut_slice(), &mut r);
        let a = load_edge_list(write_lines(&lines).path(), mode).unwrap();
        let b = load_edge_list(write_lines(&shuffled).path(), mode).unwrap();
        prop_assert_eq!(a.canonical_label_edges(), b.canonical_label_edges());
        prop_assert_eq!(a.num_edges(), b.num_edges());
    }

    #[test]
    fn undirected_degrees_sum_to_twice_the_edges(n in 2usize..40, p in 0.05f64..0.6, seed in any::<u64>()) {
        let g = common::random_graph(GraphMode::Undirected, n, 0, p, seed);
        let total: usize = (0..n).map(|i| g.degree(i, 1).unwrap()).sum();
        prop_assert_eq!(total, 2 * g.num_edges());
    }

    #[test]
    fn stored_edges_obey_the_graph_invariants(
        mode in prop::sample::select(common::MODES.to_vec()),
        n in 2usize..30,
        p in 0.05f64..0.5,
        seed in any::<u64>(),
    ) {
        let g = common::random_graph(mode, n, n / 2 + 1, p, seed);
        let mut seen = std::collections::HashSet::new();
        for &(i, j) in g.edges() {
            prop_assert!(seen.insert((i, j)));
            match mode {
                GraphMode::Undirected => prop_assert!(i < j),
                GraphMode::Directed => prop_assert!(i != j),
                GraphMode::Bipartite => prop_assert!(i < g.n1() && j < g.n2()),
            }
        }
    }
}

#[test]
fn reversed_duplicates_collapse_in_undirected_mode() {
    let f = write_lines(&["a b".into(), "b a".into(), "a a".into(), "b c 3.5".into()]);
    let (g, report) =
        hbdm::load_edge_list_with(f.path(), GraphMode::Undirected, Default::default()).unwrap();
    assert_eq!(g.num_edges(), 2);
    assert_eq!(report.self_loops_dropped, 1);
    assert_eq!(report.duplicates_collapsed, 1);
    assert_eq!(report.weight_columns_ignored, 1);
}

#[test]
fn reversed_pairs_stay_distinct_when_directed() {
    let f = write_lines(&["a b".into(), "b a".into()]);
    let g = load_edge_list(f.path(), GraphMode::Directed).unwrap();
    assert_eq!(g.num_edges(), 2);
}

#[test]
fn single_edge_graph_statistics() {
    let g = Graph::from_edges(GraphMode::Undirected, 2, 0, [(0, 1)]).unwrap();
    let s = g.stats();
    assert_eq!((s.n, s.edges), (2, 1));
    assert_eq!(s.density, 1.0);
}
