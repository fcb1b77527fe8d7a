mod common;

use common::*;
use hbdm::{auc_roc, knn_classify, make_split, GraphMode};
use proptest::prelude::*;
use rand::Rng;

fn connected_graph(n: usize, extra: f64, seed: u64) -> hbdm::Graph {
    let mut r = rng(seed);
    let mut edges: Vec<(usize, usize)> = (1..n).map(|i| (r.random_range(0..i), i)).collect();
    for i in 0..n {
        for j in i + 1..n {
            if r.random_bool(extra) {
                edges.push((i, j));
            }
        }
    }
    hbdm::Graph::from_edges(GraphMode::Undirected, n, 0, edges).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn residual_graph_stays_connected(
        n in 3usize..60,
        extra in 0.0f64..0.3,
        hide in 0.05f64..0.95,
        seed in any::<u64>(),
    ) {
        let g = connected_graph(n, extra, seed);
        let split = make_split(&g, hide, seed).unwrap();
        prop_assert!(split.train_graph.is_connected());
        prop_assert_eq!(split.train_graph.num_nodes(), g.num_nodes());
        prop_assert_eq!(split.train_graph.num_edges() + split.test_edges.len(), g.num_edges());
        let removable = g.num_edges() - (n - 1);
        let want = ((hide * g.num_edges() as f64).floor() as usize).min(removable);
        prop_assert_eq!(split.test_edges.len(), want);
        prop_assert_eq!(split.test_nonedges.len(), split.test_edges.len());
        for &(i, j) in &split.test_edges {
            prop_assert!(g.has_edge(i, j) && !split.train_graph.has_edge(i, j));
        }
        for &(i, j) in &split.test_nonedges {
            prop_assert!(i < j && !g.has_edge(i, j));
        }
    }

    #[test]
    fn auc_ignores_monotone_transforms(
        pos in prop::collection::vec(-5.0f64..5.0, 1..40),
        neg in prop::collection::vec(-5.0f64..5.0, 1..40),
        scale in 0.1f64..10.0,
        shift in -3.0f64..3.0,
    ) {
        let base = auc_roc(&pos, &neg).unwrap();
        let f = |v: &[f64]| v.iter().map(|x| (scale * x + shift).exp()).collect::<Vec<_>>();
        prop_assert!((auc_roc(&f(&pos), &f(&neg)).unwrap() - base).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&base));
    }

    #[test]
    fn knn_ignores_rotation_and_translation(
        n in 12usize..60,
        angle in 0.0f64..std::f64::consts::TAU,
        dx in -10.0f64..10.0,
        dy in -10.0f64..10.0,
        seed in any::<u64>(),
    ) {
        let mut r = rng(seed);
        let pts: Vec<f64> = (0..2 * n).map(|_| r.random_range(-3.0..3.0)).collect();
        let labels: Vec<Vec<usize>> = (0..n).map(|i| vec![usize::from(pts[2 * i] > 0.0)]).collect();
        let (s, c) = angle.sin_cos();
        let moved: Vec<f64> = (0..n)
            .flat_map(|i| {
                let (x, y) = (pts[2 * i], pts[2 * i + 1]);
                [c * x - s * y + dx, s * x + c * y + dy]
            })
            .collect();
        let a = knn_classify(&pts, 2, &labels, 0.5, 5, 3, seed).unwrap();
        let b = knn_classify(&moved, 2, &labels, 0.5, 5, 3, seed).unwrap();
        prop_assert!((a.micro_f1 - b.micro_f1).abs() < 1e-12);
        prop_assert!((a.macro_f1 - b.macro_f1).abs() < 1e-12);
    }
}

#[test]
fn random_labels_score_near_chance() {
    let mut r = rng(1);
    let n = 2000;
    let pts: Vec<f64> = (0..2 * n).map(|_| r.random_range(0.0..1.0)).collect();
    let labels: Vec<Vec<usize>> = (0..n).map(|_| vec![r.random_range(0..2)]).collect();
    let report = knn_classify(&pts, 2, &labels, 0.5, 10, 5, 1).unwrap();
    assert!((report.micro_f1 - 0.5).abs() < 0.05, "{}", report.micro_f1);
}

#[test]
fn identical_embeddings_predict_the_majority_class() {
    let n = 200;
    let pts = vec![1.0; 2 * n];
    let labels: Vec<Vec<usize>> = (0..n).map(|i| vec![usize::from(i % 10 >= 7)]).collect();
    let report = knn_classify(&pts, 2, &labels, 0.5, 10, 10, 3).unwrap();
    assert!((report.micro_f1 - 0.7).abs() < 0.05, "{}", report.micro_f1);
}

#[test]
fn perfect_and_reversed_scores() {
    assert_eq!(auc_roc(&[0.9, 0.8], &[0.1, 0.2]).unwrap(), 1.0);
    assert_eq!(auc_roc(&[0.1], &[0.9]).unwrap(), 0.0);
    assert_eq!(auc_roc(&[0.5, 0.5], &[0.5]).unwrap(), 0.5);
}
