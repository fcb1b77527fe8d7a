//! Link-prediction and node-classification harnesses.

use std::collections::{HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{HbdmError, Result};
use crate::graph::{Graph, GraphMode};
use crate::model::EmbeddingState;
use crate::numeric::{euclid, mix_seed};

#[derive(Debug, Clone, Copy, Default)]
pub struct SplitOptions {
    /// Accept disconnected inputs and protect a spanning forest instead of
    /// refusing them.
    pub spanning_forest: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitMeta {
    pub hide_fraction: f64,
    pub seed: u64,
    pub original_edges: usize,
    pub protected_edges: usize,
    pub removable_edges: usize,
    pub requested_test_edges: usize,
    pub train_edges: usize,
    pub test_edges: usize,
    pub test_nonedges: usize,
    pub components: usize,
    pub warning: Option<String>,
}

#[derive(Debug, Clone)]
pub struct EvalSplit {
    pub train_graph: Graph,
    /// Hidden edges in graph ids (bipartite: `(mode1, mode2)`).
    pub test_edges: Vec<(usize, usize)>,
    pub test_nonedges: Vec<(usize, usize)>,
    pub hide_fraction: f64,
    pub meta: SplitMeta,
}

/// Uniform spanning forest of an undirected adjacency by Wilson's algorithm.
/// Returns the `(child, parent)` tree edges.
fn wilson_forest(adj: &[Vec<usize>], comp: &[usize], rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    let n = adj.len();
    let mut in_tree = vec![false; n];
    let mut next = vec![usize::MAX; n];
    let mut seen_comp = HashSet::new();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    // One root per component: the first node of that component in `order`.
    for &u in &order {
        if seen_comp.insert(comp[u]) {
            in_tree[u] = true;
        }
    }
    for &start in &order {
        let mut u = start;
        while !in_tree[u] {
            next[u] = adj[u][rng.random_range(0..adj[u].len())];
            u = next[u];
        }
        let mut u = start;
        while !in_tree[u] {
            in_tree[u] = true;
            u = next[u];
        }
    }
    (0..n)
        .filter(|&u| next[u] != usize::MAX)
        .map(|u| (u, next[u]))
        .collect()
}

pub fn make_split(g: &Graph, hide_fraction: f64, seed: u64) -> Result<EvalSplit> {
    make_split_with(g, hide_fraction, seed, SplitOptions::default())
}

/// Hides a uniform random subset of edges while protecting a uniform spanning
/// tree, then samples as many uniform non-edges of the original graph.
pub fn make_split_with(
    g: &Graph,
    hide_fraction: f64,
    seed: u64,
    opts: SplitOptions,
) -> Result<EvalSplit> {
    if !(hide_fraction > 0.0 && hide_fraction < 1.0) {
        return Err(HbdmError::InvalidArgument(format!(
            "hide fraction must lie in (0, 1), got {hide_fraction}"
        )));
    }
    let (components, comp) = g.components();
    if components > 1 && !opts.spanning_forest {
        return Err(HbdmError::Disconnected { components });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0x5711));
    let off = if g.mode() == GraphMode::Bipartite {
        g.n1()
    } else {
        0
    };

    // Undirected view over the combined node space, keyed back to edge indices.
    let mut by_pair: HashMap<(usize, usize), usize> = HashMap::with_capacity(g.num_edges());
    for (idx, &(i, j)) in g.edges().iter().enumerate() {
        let (a, b) = (i, j + off);
        by_pair.entry((a.min(b), a.max(b))).or_insert(idx);
    }
    let adj = g.undirected_adjacency();
    let mut protected = vec![false; g.num_edges()];
    for (u, v) in wilson_forest(&adj, &comp, &mut rng) {
        protected[by_pair[&(u.min(v), u.max(v))]] = true;
    }

    let mut removable: Vec<usize> = (0..g.num_edges()).filter(|&e| !protected[e]).collect();
    let requested = (hide_fraction * g.num_edges() as f64).floor() as usize;
    let mut warning = None;
    if removable.len() < requested {
        let msg = format!(
            "only {} edges can be hidden without disconnecting the graph ({} requested)",
            removable.len(),
            requested
        );
        log::warn!("{msg}");
        warning = Some(msg);
    }
    removable.shuffle(&mut rng);
    let mut hidden: Vec<usize> = removable.iter().copied().take(requested).collect();
    hidden.sort_unstable();
    let hidden_set: HashSet<usize> = hidden.iter().copied().collect();

    let test_edges: Vec<(usize, usize)> = hidden.iter().map(|&e| g.edges()[e]).collect();
    let train_edges: Vec<(usize, usize)> = (0..g.num_edges())
        .filter(|e| !hidden_set.contains(e))
        .map(|e| g.edges()[e])
        .collect();
    let train_graph = g.with_edges(train_edges)?;
    let test_nonedges = sample_nonedges(g, test_edges.len(), &mut rng)?;

    let meta = SplitMeta {
        hide_fraction,
        seed,
        original_edges: g.num_edges(),
        protected_edges: protected.iter().filter(|&&p| p).count(),
        removable_edges: removable.len(),
        requested_test_edges: requested,
        train_edges: train_graph.num_edges(),
        test_edges: test_edges.len(),
        test_nonedges: test_nonedges.len(),
        components,
        warning,
    };
    Ok(EvalSplit {
        train_graph,
        test_edges,
        test_nonedges,
        hide_fraction,
        meta,
    })
}

/// Uniform distinct dyads absent from `g`, by rejection.
pub fn sample_nonedges(
    g: &Graph,
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<(usize, usize)>> {
    let available = g.layout().num_pairs().saturating_sub(g.num_edges());
    if count > available {
        return Err(HbdmError::InvalidArgument(format!(
            "cannot sample {count} non-edges; only {available} exist"
        )));
    }
    let (n1, n2) = match g.mode() {
        GraphMode::Bipartite => (g.n1(), g.n2()),
        _ => (g.n1(), g.n1()),
    };
    let mut seen = HashSet::with_capacity(count);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let (mut i, mut j) = (rng.random_range(0..n1), rng.random_range(0..n2));
        match g.mode() {
            GraphMode::Bipartite => {}
            _ if i == j => continue,
            GraphMode::Undirected if i > j => std::mem::swap(&mut i, &mut j),
            _ => {}
        }
        if g.has_edge(i, j) || !seen.insert((i, j)) {
            continue;
        }
        out.push((i, j));
    }
    Ok(out)
}

/// Log-rate scores `b_i + b_j - ||z_i - z_j||` for node pairs in graph ids.
pub fn score_pairs(state: &EmbeddingState, pairs: &[(usize, usize)]) -> Result<Vec<f64>> {
    pairs
        .iter()
        .map(|&(i, j)| {
            let (a, b) = state.pair_rows(i, j)?;
            Ok(state.effects()[a] + state.effects()[b] - euclid(state.point(a), state.point(b)))
        })
        .collect()
}

fn check_scores(pos: &[f64], neg: &[f64]) -> Result<()> {
    if pos.is_empty() || neg.is_empty() {
        return Err(HbdmError::InvalidArgument(
            "AUC needs at least one positive and one negative score".into(),
        ));
    }
    if pos.iter().chain(neg).any(|s| s.is_nan()) {
        return Err(HbdmError::NonFinite("NaN score".into()));
    }
    Ok(())
}

/// Tagged scores sorted ascending, ties adjacent.
fn sorted_tagged(pos: &[f64], neg: &[f64]) -> Vec<(f64, bool)> {
    let mut all: Vec<(f64, bool)> = pos
        .iter()
        .map(|&s| (s, true))
        .chain(neg.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    all
}

/// ROC-AUC via the Mann-Whitney statistic with mid-ranks (ties count 1/2).
pub fn auc_roc(pos: &[f64], neg: &[f64]) -> Result<f64> {
    check_scores(pos, neg)?;
    let all = sorted_tagged(pos, neg);
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        let mid = (i + j + 1) as f64 / 2.0;
        rank_sum += mid * all[i..j].iter().filter(|t| t.1).count() as f64;
        i = j;
    }
    let (p, n) = (pos.len() as f64, neg.len() as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Area under the precision-recall curve as average precision, with tied
/// scores entering at one threshold.
pub fn auc_pr(pos: &[f64], neg: &[f64]) -> Result<f64> {
    check_scores(pos, neg)?;
    let mut all = sorted_tagged(pos, neg);
    all.reverse();
    let total = pos.len() as f64;
    let (mut tp, mut seen, mut ap) = (0usize, 0usize, 0.0);
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        let mut group_tp = 0;
        while j < all.len() && all[j].0 == all[i].0 {
            group_tp += all[j].1 as usize;
            j += 1;
        }
        tp += group_tp;
        seen += j - i;
        ap += (group_tp as f64 / total) * (tp as f64 / seen as f64);
        i = j;
    }
    Ok(ap)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkPredictionMetrics {
    pub auc_roc: f64,
    pub auc_pr: f64,
    pub split_meta: SplitMeta,
}

/// Scores the split's held-out pairs with `state`.
pub fn evaluate_link_prediction(
    state: &EmbeddingState,
    split: &EvalSplit,
) -> Result<LinkPredictionMetrics> {
    let pos = score_pairs(state, &split.test_edges)?;
    let neg = score_pairs(state, &split.test_nonedges)?;
    Ok(LinkPredictionMetrics {
        auc_roc: auc_roc(&pos, &neg)?,
        auc_pr: auc_pr(&pos, &neg)?,
        split_meta: split.meta.clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialScore {
    pub trial: usize,
    pub micro_f1: f64,
    pub macro_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnReport {
    pub micro_f1: f64,
    pub macro_f1: f64,
    pub multi_label: bool,
    pub per_trial: Vec<TrialScore>,
}

/// Labels of the neighbours of `x`: the `k` nearest training points plus any
/// further points at exactly the `k`-th distance.
fn neighbour_votes(
    points: &[f64],
    dim: usize,
    x: &[f64],
    train: &[usize],
    labels: &[Vec<usize>],
    k: usize,
    counts: &mut [usize],
) {
    let mut d: Vec<(f64, usize)> = train
        .iter()
        .map(|&t| (euclid(&points[t * dim..(t + 1) * dim], x), t))
        .collect();
    d.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0));
    let radius = d[k - 1].0;
    for &(dist, t) in &d {
        if dist <= radius {
            for &c in &labels[t] {
                counts[c] += 1;
            }
        }
    }
}

/// The `r` most frequent classes; ties go to the smaller class id.
fn top_classes(counts: &[usize], r: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..counts.len()).filter(|&c| counts[c] > 0).collect();
    idx.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
    idx.truncate(r);
    idx
}

/// Micro- and macro-F1 over label sets. Classes that occur neither in the
/// truth nor in the predictions are left out of the macro average.
pub fn f1_scores(truth: &[Vec<usize>], pred: &[Vec<usize>], num_classes: usize) -> (f64, f64) {
    let mut tp = vec![0usize; num_classes];
    let mut fp = vec![0usize; num_classes];
    let mut fnn = vec![0usize; num_classes];
    for (t, p) in truth.iter().zip(pred) {
        for &c in p {
            if t.contains(&c) {
                tp[c] += 1;
            } else {
                fp[c] += 1;
            }
        }
        for &c in t {
            if !p.contains(&c) {
                fnn[c] += 1;
            }
        }
    }
    let f1 = |tp: usize, fp: usize, fnn: usize| {
        let den = 2 * tp + fp + fnn;
        if den == 0 {
            None
        } else {
            Some(2.0 * tp as f64 / den as f64)
        }
    };
    let micro = f1(tp.iter().sum(), fp.iter().sum(), fnn.iter().sum()).unwrap_or(0.0);
    let per: Vec<f64> = (0..num_classes)
        .filter_map(|c| f1(tp[c], fp[c], fnn[c]))
        .collect();
    let macro_ = if per.is_empty() {
        0.0
    } else {
        per.iter().sum::<f64>() / per.len() as f64
    };
    (micro, macro_)
}

/// kNN node classification averaged over random train/test splits.
///
/// `points` is row-major `n x dim`; `labels[i]` lists the class ids of node
/// `i`. When every node has exactly one class this is majority vote;
/// otherwise each test node receives its `r` most voted classes, `r` being its
/// true label count.
pub fn knn_classify(
    points: &[f64],
    dim: usize,
    labels: &[Vec<usize>],
    train_frac: f64,
    k: usize,
    trials: usize,
    seed: u64,
) -> Result<KnnReport> {
    let n = labels.len();
    if dim == 0 || points.len() != n * dim {
        return Err(HbdmError::Mismatch(format!(
            "{} coordinates for {n} labelled nodes",
            points.len()
        )));
    }
    if labels.iter().any(|l| l.is_empty()) {
        return Err(HbdmError::InvalidArgument(
            "every node needs at least one class".into(),
        ));
    }
    if !(train_frac > 0.0 && train_frac < 1.0) || trials == 0 || k == 0 {
        return Err(HbdmError::InvalidArgument(
            "need 0 < train_frac < 1, k >= 1 and trials >= 1".into(),
        ));
    }
    let n_train = ((train_frac * n as f64).round() as usize).clamp(1, n.saturating_sub(1).max(1));
    if n < 2 {
        return Err(HbdmError::InvalidArgument(
            "need at least two labelled nodes".into(),
        ));
    }
    if k > n_train {
        return Err(HbdmError::InvalidArgument(format!(
            "k = {k} exceeds the training set size {n_train}"
        )));
    }
    let num_classes = labels.iter().flatten().max().map_or(0, |&m| m + 1);
    let multi_label = labels.iter().any(|l| l.len() != 1);

    let per_trial: Vec<TrialScore> = (0..trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, trial as u64));
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            let (train, test) = order.split_at(n_train);
            let pred: Vec<Vec<usize>> = test
                .par_iter()
                .map(|&i| {
                    let mut counts = vec![0usize; num_classes];
                    neighbour_votes(
                        points,
                        dim,
                        &points[i * dim..(i + 1) * dim],
                        train,
                        labels,
                        k,
                        &mut counts,
                    );
                    top_classes(&counts, labels[i].len())
                })
                .collect();
            let truth: Vec<Vec<usize>> = test.iter().map(|&i| labels[i].clone()).collect();
            let (micro_f1, macro_f1) = f1_scores(&truth, &pred, num_classes);
            TrialScore {
                trial,
                micro_f1,
                macro_f1,
            }
        })
        .collect();
    let t = trials as f64;
    Ok(KnnReport {
        micro_f1: per_trial.iter().map(|s| s.micro_f1).sum::<f64>() / t,
        macro_f1: per_trial.iter().map(|s| s.macro_f1).sum::<f64>() / t,
        multi_label,
        per_trial,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cycle(n: usize) -> Graph {
        Graph::from_edges(
            GraphMode::Undirected,
            n,
            0,
            (0..n).map(|i| (i, (i + 1) % n)),
        )
        .unwrap()
    }

    #[test]
    fn cycle_leaves_one_removable_edge() {
        let s = make_split(&cycle(10), 0.5, 3).unwrap();
        assert_eq!(s.test_edges.len(), 1);
        assert_eq!(s.test_nonedges.len(), 1);
        assert_eq!(s.meta.protected_edges, 9);
        assert!(s.meta.warning.is_some());
        assert!(s.train_graph.is_connected());
    }

    #[test]
    fn tree_input_has_empty_test_set() {
        let g = Graph::from_edges(
            GraphMode::Undirected,
            5,
            0,
            [(0, 1), (1, 2), (1, 3), (3, 4)],
        )
        .unwrap();
        let s = make_split(&g, 0.5, 0).unwrap();
        assert!(s.test_edges.is_empty() && s.test_nonedges.is_empty());
        assert!(s.meta.warning.is_some());
    }

    #[test]
    fn disconnected_refused_unless_forest() {
        let g = Graph::from_edges(GraphMode::Undirected, 4, 0, [(0, 1), (2, 3)]).unwrap();
        assert!(matches!(
            make_split(&g, 0.5, 0),
            Err(HbdmError::Disconnected { components: 2 })
        ));
        let s = make_split_with(
            &g,
            0.5,
            0,
            SplitOptions {
                spanning_forest: true,
            },
        )
        .unwrap();
        assert!(s.test_edges.is_empty());
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc_roc(&[0.9, 0.4], &[0.5, 0.1]).unwrap(), 0.75);
        assert_eq!(auc_roc(&[1.0, 1.0], &[1.0]).unwrap(), 0.5);
        assert_eq!(auc_roc(&[3.0, 4.0], &[1.0, 2.0]).unwrap(), 1.0);
        assert!(auc_roc(&[], &[1.0]).is_err());
        assert_eq!(auc_pr(&[3.0, 4.0], &[1.0, 2.0]).unwrap(), 1.0);
        assert!((auc_pr(&[1.0], &[1.0]).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn coincident_pair_scores_zero() {
        let st = EmbeddingState::zeros(cycle(3).layout(), 2, false);
        assert_eq!(score_pairs(&st, &[(0, 1)]).unwrap(), vec![0.0]);
        assert!(score_pairs(&st, &[(0, 7)]).is_err());
    }

    #[test]
    fn separated_clouds_classify_perfectly() {
        let mut pts = Vec::new();
        let mut labels = Vec::new();
        for i in 0..40 {
            let c = i % 2;
            pts.extend([c as f64 * 100.0 + (i as f64) * 0.01, 0.0]);
            labels.push(vec![c]);
        }
        let r = knn_classify(&pts, 2, &labels, 0.5, 1, 5, 1).unwrap();
        assert_eq!(r.micro_f1, 1.0);
        assert_eq!(r.macro_f1, 1.0);
        assert!(knn_classify(&pts, 2, &labels, 0.5, 21, 1, 1).is_err());
    }

    #[test]
    fn multi_label_rank_protocol() {
        let truth = vec![vec![0, 1], vec![2]];
        let pred = vec![vec![0, 2], vec![2]];
        let (micro, macro_) = f1_scores(&truth, &pred, 3);
        assert!((micro - 2.0 * 2.0 / (4.0 + 1.0 + 1.0)).abs() < 1e-12);
        assert!((macro_ - (1.0 + 0.0 + 2.0 / 3.0) / 3.0).abs() < 1e-12);
        assert_eq!(top_classes(&[2, 3, 3, 0], 2), vec![1, 2]);
    }
}
