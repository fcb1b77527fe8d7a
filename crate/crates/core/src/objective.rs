//! Hierarchical block approximation of the latent distance log-likelihood.
//!
//! ```text
//! -log P = -sum_{edges} (b_i + b_j - d_ij)                     (exact link term)
//!          + sum_{leaves} sum_{i<j in leaf} exp(b_i + b_j - d_ij)  (exact within leaves)
//!          + sum_l sum_{siblings k,k'} exp(-|mu_k - mu_k'|) S_k S_k'
//! ```
//!
//! with `S_k = sum_{i in C_k} exp(b_i)`. Sibling pairs are all pairs of level-1
//! clusters plus the two children of every deeper split, so every dyad is
//! counted exactly once: inside a leaf, or at the level where the tree paths
//! of its endpoints diverge. Two-set layouts replace `S_k S_k'` with
//! `A_k B_k' + A_k' B_k` (first-set sums times second-set sums); directed
//! layouts additionally subtract the block estimate of each node's own
//! source/target pair.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{HbdmError, Result};
use crate::graph::Graph;
use crate::hierarchy::ClusterTree;
use crate::model::{link_gradient, link_term, EmbeddingState, Gradient, Layout, ObjectiveReport};
use crate::numeric::{guarded_exp, ordered_sum, soft_dist};

/// How cluster centroids depend on the embedding.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CentroidMode {
    /// `mu_k = sum_i w_i z_i` with the weights frozen at tree construction;
    /// gradients flow through the centroids.
    #[default]
    FrozenWeights,
    /// Centroids are the tree's stored values and carry no gradient.
    Detached,
}

/// A directed node whose source and target rows sit in different clusters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SelfPair {
    pub level: usize,
    pub source_node: usize,
    pub target_node: usize,
    pub source_row: usize,
    pub target_row: usize,
}

/// Per-tree bookkeeping of which dyads each term covers.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockPairCache {
    /// Entry `l - 1` holds the sibling node pairs approximated at level `l`.
    pub levels: Vec<Vec<(usize, usize)>>,
    pub leaves: Vec<usize>,
    pub self_pairs: Vec<SelfPair>,
}

impl BlockPairCache {
    pub fn new(tree: &ClusterTree, layout: Layout) -> Self {
        let mut levels = Vec::new();
        for (l, groups) in tree.sibling_groups().into_iter().enumerate() {
            let mut pairs = Vec::new();
            for g in groups {
                for a in 0..g.len() {
                    for b in a + 1..g.len() {
                        pairs.push((g[a], g[b]));
                    }
                }
            }
            debug_assert!(levels.len() == l);
            levels.push(pairs);
        }
        let leaves: Vec<usize> = tree.leaves().map(|n| n.id).collect();
        let mut self_pairs = Vec::new();
        if let Layout::TwoSet {
            n1,
            n2,
            exclude_self: true,
        } = layout
        {
            let mut leaf_of = vec![usize::MAX; layout.rows()];
            for &l in &leaves {
                for &m in &tree.node(l).members {
                    leaf_of[m] = l;
                }
            }
            let path = |mut node: usize| {
                let mut p = vec![node];
                while let Some(par) = tree.node(node).parent {
                    p.push(par);
                    node = par;
                }
                p.reverse();
                p
            };
            for i in 0..n1.min(n2) {
                let (s, t) = (i, n1 + i);
                if leaf_of[s] == leaf_of[t] {
                    continue;
                }
                let (ps, pt) = (path(leaf_of[s]), path(leaf_of[t]));
                let depth = ps.iter().zip(&pt).take_while(|(a, b)| a == b).count();
                let (a, b) = (ps[depth], pt[depth]);
                self_pairs.push(SelfPair {
                    level: tree.node(a).level,
                    source_node: a,
                    target_node: b,
                    source_row: s,
                    target_row: t,
                });
            }
        }
        Self {
            levels,
            leaves,
            self_pairs,
        }
    }

    /// How many times each row pair `(a, b)`, `a < b`, is counted by the
    /// leaf and block terms. Row-major `rows x rows`; only for small inputs.
    pub fn coverage_matrix(&self, tree: &ClusterTree, layout: Layout) -> Vec<i32> {
        let n = layout.rows();
        let mut counts = vec![0i32; n * n];
        let mut bump = |a: usize, b: usize, by: i32| {
            let (a, b) = if a < b { (a, b) } else { (b, a) };
            counts[a * n + b] += by;
        };
        for &l in &self.leaves {
            let m = &tree.node(l).members;
            for x in 0..m.len() {
                for y in x + 1..m.len() {
                    if layout.is_pair(m[x], m[y]) {
                        bump(m[x], m[y], 1);
                    }
                }
            }
        }
        for pairs in &self.levels {
            for &(k, kk) in pairs {
                for &a in &tree.node(k).members {
                    for &b in &tree.node(kk).members {
                        let counted = match layout {
                            Layout::Unipartite { .. } => true,
                            // Block factors span every first x second combination.
                            Layout::TwoSet { .. } => layout.in_second(a) != layout.in_second(b),
                        };
                        if counted {
                            bump(a, b, 1);
                        }
                    }
                }
            }
        }
        for sp in &self.self_pairs {
            bump(sp.source_row, sp.target_row, -1);
        }
        counts
    }
}

/// The hierarchical objective bound to a graph and a tree.
///
/// Rows are visited in the tree's leaf order, where every cluster occupies a
/// contiguous range; this keeps per-node passes cache friendly.
pub struct HbdmObjective<'a> {
    tree: &'a ClusterTree,
    layout: Layout,
    row_edges: Vec<(usize, usize)>,
    cache: BlockPairCache,
    pub centroid_mode: CentroidMode,
    /// Rows in leaf order.
    order: Vec<usize>,
    /// Range of each node within `order`.
    span: Vec<(usize, usize)>,
    /// Frozen centroid weights in leaf order, stored from `weight_off[node]`.
    weights: Vec<f64>,
    weight_off: Vec<usize>,
    needed: Vec<bool>,
}

struct NodeSums {
    centroid: Vec<f64>,
    first: f64,
    second: f64,
}

/// Coordinates, effects and `exp` of effects gathered into leaf order.
struct Gathered {
    z: Vec<f64>,
    b: Vec<f64>,
    exp_b: Vec<f64>,
    clamped: Vec<bool>,
    second: Vec<bool>,
}

impl<'a> HbdmObjective<'a> {
    pub fn new(g: &Graph, tree: &'a ClusterTree) -> Result<Self> {
        let layout = g.layout();
        if tree.n_points() != layout.rows() {
            return Err(HbdmError::Mismatch(format!(
                "tree covers {} rows but the graph has {}",
                tree.n_points(),
                layout.rows()
            )));
        }
        let cache = BlockPairCache::new(tree, layout);
        let nodes = tree.nodes();
        let mut needed = vec![false; nodes.len()];
        for pairs in &cache.levels {
            for &(a, b) in pairs {
                needed[a] = true;
                needed[b] = true;
            }
        }
        let mut order = Vec::with_capacity(layout.rows());
        let mut span = vec![(0, 0); nodes.len()];
        let mut stack = vec![(tree.root().id, false)];
        while let Some((id, done)) = stack.pop() {
            let node = tree.node(id);
            if done {
                span[id].1 = order.len();
                continue;
            }
            span[id].0 = order.len();
            if node.is_leaf {
                order.extend_from_slice(&node.members);
                span[id].1 = order.len();
            } else {
                stack.push((id, true));
                for &c in node.children.iter().rev() {
                    stack.push((c, false));
                }
            }
        }
        let mut weights = Vec::new();
        let mut weight_off = vec![0; nodes.len()];
        let mut by_row = vec![0.0; layout.rows()];
        for n in nodes {
            weight_off[n.id] = weights.len();
            if !needed[n.id] {
                continue;
            }
            for (&m, &w) in n.members.iter().zip(&n.weights) {
                by_row[m] = w;
            }
            let (s, e) = span[n.id];
            weights.extend(order[s..e].iter().map(|&r| by_row[r]));
        }
        Ok(Self {
            tree,
            layout,
            row_edges: g.row_edges(),
            cache,
            centroid_mode: CentroidMode::default(),
            order,
            span,
            weights,
            weight_off,
            needed,
        })
    }

    pub fn with_centroid_mode(mut self, mode: CentroidMode) -> Self {
        self.centroid_mode = mode;
        self
    }

    pub fn cache(&self) -> &BlockPairCache {
        &self.cache
    }

    fn check(&self, state: &EmbeddingState) -> Result<()> {
        if state.layout() != self.layout {
            return Err(HbdmError::Mismatch(
                "state layout does not match the graph".into(),
            ));
        }
        if state.dim() != self.tree.dim() {
            return Err(HbdmError::Mismatch(format!(
                "state has dimension {} but the tree {}",
                state.dim(),
                self.tree.dim()
            )));
        }
        state.check_finite()
    }

    fn gather(&self, state: &EmbeddingState) -> Gathered {
        let d = state.dim();
        let n = self.order.len();
        let mut z = Vec::with_capacity(n * d);
        let mut b = Vec::with_capacity(n);
        let mut exp_b = Vec::with_capacity(n);
        let mut clamped = Vec::with_capacity(n);
        let mut second = Vec::with_capacity(n);
        for &r in &self.order {
            z.extend_from_slice(state.point(r));
            let x = state.effects()[r];
            let (e, c) = guarded_exp(x);
            b.push(x);
            exp_b.push(e);
            clamped.push(c);
            second.push(self.layout.in_second(r));
        }
        Gathered {
            z,
            b,
            exp_b,
            clamped,
            second,
        }
    }

    fn node_sums(&self, gat: &Gathered, d: usize) -> Vec<Option<NodeSums>> {
        self.tree
            .nodes()
            .par_iter()
            .map(|n| {
                if !self.needed[n.id] {
                    return None;
                }
                let (s, e) = self.span[n.id];
                let centroid = match self.centroid_mode {
                    CentroidMode::FrozenWeights => {
                        let w = &self.weights[self.weight_off[n.id]..][..e - s];
                        let mut c = vec![0.0; d];
                        for (t, &wt) in (s..e).zip(w) {
                            for (ck, x) in c.iter_mut().zip(&gat.z[t * d..(t + 1) * d]) {
                                *ck += wt * x;
                            }
                        }
                        c
                    }
                    CentroidMode::Detached => n.centroid.clone(),
                };
                let (mut first, mut second) = (0.0, 0.0);
                for t in s..e {
                    if gat.second[t] {
                        second += gat.exp_b[t];
                    } else {
                        first += gat.exp_b[t];
                    }
                }
                Some(NodeSums {
                    centroid,
                    first,
                    second,
                })
            })
            .collect()
    }

    /// Block factor between two nodes.
    #[inline]
    fn factor(&self, a: &NodeSums, b: &NodeSums) -> f64 {
        match self.layout {
            Layout::Unipartite { .. } => a.first * b.first,
            Layout::TwoSet { .. } => a.first * b.second + b.first * a.second,
        }
    }

    pub fn nll(&self, state: &EmbeddingState) -> Result<ObjectiveReport> {
        self.evaluate(state, false).map(|(r, _)| r)
    }

    pub fn gradient(&self, state: &EmbeddingState) -> Result<Gradient> {
        self.evaluate(state, true).map(|(_, g)| g.unwrap())
    }

    pub fn nll_and_gradient(&self, state: &EmbeddingState) -> Result<(ObjectiveReport, Gradient)> {
        self.evaluate(state, true).map(|(r, g)| (r, g.unwrap()))
    }

    fn evaluate(
        &self,
        state: &EmbeddingState,
        want_grad: bool,
    ) -> Result<(ObjectiveReport, Option<Gradient>)> {
        self.check(state)?;
        let d = state.dim();
        let rows = state.rows();
        let gat = self.gather(state);
        let mut clamped = gat.clamped.iter().filter(|&&c| c).count();

        let sums = self.node_sums(&gat, d);

        // Block terms.
        let mut blocks = vec![0.0; self.cache.levels.len()];
        let mut node_grad: Vec<Option<(Vec<f64>, f64, f64)>> = if want_grad {
            sums.iter()
                .map(|s| s.as_ref().map(|_| (vec![0.0; d], 0.0, 0.0)))
                .collect()
        } else {
            Vec::new()
        };
        // Gradients in leaf order; scattered back to rows at the end.
        let mut dz = vec![0.0; if want_grad { rows * d } else { 0 }];
        let mut drow = vec![0.0; if want_grad { rows } else { 0 }];

        let add_centroid_grad = |node_grad: &mut Vec<Option<(Vec<f64>, f64, f64)>>,
                                 ka: usize,
                                 kb: usize,
                                 term: f64,
                                 u: &[f64]| {
            for (g, &x) in node_grad[ka].as_mut().unwrap().0.iter_mut().zip(u) {
                *g -= term * x;
            }
            for (g, &x) in node_grad[kb].as_mut().unwrap().0.iter_mut().zip(u) {
                *g += term * x;
            }
        };

        for (l, pairs) in self.cache.levels.iter().enumerate() {
            let mut acc = Vec::with_capacity(pairs.len());
            for &(ka, kb) in pairs {
                let (sa, sb) = (sums[ka].as_ref().unwrap(), sums[kb].as_ref().unwrap());
                let dist = soft_dist(&sa.centroid, &sb.centroid);
                let e = (-dist).exp();
                let term = e * self.factor(sa, sb);
                acc.push(term);
                if want_grad {
                    let u: Vec<f64> = sa
                        .centroid
                        .iter()
                        .zip(&sb.centroid)
                        .map(|(x, y)| (x - y) / dist)
                        .collect();
                    add_centroid_grad(&mut node_grad, ka, kb, term, &u);
                    let (ga, gb) = (node_grad[ka].as_mut().unwrap(), (sb.first, sb.second));
                    // (.1, .2): coefficient for first-set / second-set members.
                    match self.layout {
                        Layout::Unipartite { .. } => ga.1 += e * gb.0,
                        Layout::TwoSet { .. } => {
                            ga.1 += e * gb.1;
                            ga.2 += e * gb.0;
                        }
                    }
                    let gb_node = node_grad[kb].as_mut().unwrap();
                    match self.layout {
                        Layout::Unipartite { .. } => gb_node.1 += e * sa.first,
                        Layout::TwoSet { .. } => {
                            gb_node.1 += e * sa.second;
                            gb_node.2 += e * sa.first;
                        }
                    }
                }
            }
            blocks[l] = ordered_sum(acc);
        }

        let exp_row = |r: usize| guarded_exp(state.effects()[r]);
        for sp in &self.cache.self_pairs {
            let (sa, sb) = (
                sums[sp.source_node].as_ref().unwrap(),
                sums[sp.target_node].as_ref().unwrap(),
            );
            let dist = soft_dist(&sa.centroid, &sb.centroid);
            let e = (-dist).exp();
            let ((es, cs), (et, ct)) = (exp_row(sp.source_row), exp_row(sp.target_row));
            let term = -e * es * et;
            blocks[sp.level - 1] += term;
            if want_grad {
                let u: Vec<f64> = sa
                    .centroid
                    .iter()
                    .zip(&sb.centroid)
                    .map(|(x, y)| (x - y) / dist)
                    .collect();
                add_centroid_grad(&mut node_grad, sp.source_node, sp.target_node, term, &u);
                if !cs {
                    drow[sp.source_row] += term;
                }
                if !ct {
                    drow[sp.target_row] += term;
                }
            }
        }

        // Leaf terms, over contiguous ranges of the gathered arrays.
        let leaf_parts: Vec<(f64, usize, Vec<f64>, Vec<f64>)> = self
            .cache
            .leaves
            .par_iter()
            .map(|&leaf| {
                let (s, e) = self.span[leaf];
                let mut value = 0.0;
                let mut clamps = 0;
                let len = if want_grad { e - s } else { 0 };
                let mut gb = vec![0.0; len];
                let mut gz = vec![0.0; len * d];
                for x in s..e {
                    for y in x + 1..e {
                        if !self.layout.is_pair(self.order[x], self.order[y]) {
                            continue;
                        }
                        let (px, py) = (&gat.z[x * d..(x + 1) * d], &gat.z[y * d..(y + 1) * d]);
                        let dist = soft_dist(px, py);
                        let (lam, was_clamped) = guarded_exp(gat.b[x] + gat.b[y] - dist);
                        value += lam;
                        clamps += was_clamped as usize;
                        if want_grad && !was_clamped {
                            let (ix, iy) = (x - s, y - s);
                            gb[ix] += lam;
                            gb[iy] += lam;
                            for k in 0..d {
                                let g = lam * (px[k] - py[k]) / dist;
                                gz[ix * d + k] -= g;
                                gz[iy * d + k] += g;
                            }
                        }
                    }
                }
                (value, clamps, gb, gz)
            })
            .collect();
        let leaf_term = ordered_sum(leaf_parts.iter().map(|p| p.0));
        clamped += leaf_parts.iter().map(|p| p.1).sum::<usize>();

        let link = link_term(state, &self.row_edges);
        let report = ObjectiveReport::assemble(link, leaf_term, blocks, clamped);
        if !want_grad {
            return Ok((report, None));
        }

        // Leaf-order accumulators for the leaf and centroid contributions.
        let mut gz_ord = vec![0.0; rows * d];
        let mut gb_ord = vec![0.0; rows];
        for (&leaf, (_, _, gb, gz)) in self.cache.leaves.iter().zip(&leaf_parts) {
            let s = self.span[leaf].0;
            for (t, v) in gb.iter().enumerate() {
                gb_ord[s + t] += v;
            }
            for (t, v) in gz.iter().enumerate() {
                gz_ord[s * d + t] += v;
            }
        }
        let flows = self.centroid_mode == CentroidMode::FrozenWeights;
        for (id, ng) in node_grad.iter().enumerate() {
            let Some((g, c_first, c_second)) = ng else {
                continue;
            };
            let (s, e) = self.span[id];
            let w = &self.weights[self.weight_off[id]..][..e - s];
            for (t, &wt) in (s..e).zip(w) {
                if flows {
                    for k in 0..d {
                        gz_ord[t * d + k] += wt * g[k];
                    }
                }
                if !gat.clamped[t] {
                    let coef = if gat.second[t] { *c_second } else { *c_first };
                    gb_ord[t] += gat.exp_b[t] * coef;
                }
            }
        }
        for (t, &r) in self.order.iter().enumerate() {
            drow[r] += gb_ord[t];
            for k in 0..d {
                dz[r * d + k] += gz_ord[t * d + k];
            }
        }
        link_gradient(state, &self.row_edges, &mut dz, &mut drow);
        Ok((report, Some(Gradient::from_rows(state, dz, drow))))
    }
}

/// Hierarchical negative log-likelihood with frozen-weight centroids.
pub fn hbdm_nll(g: &Graph, state: &EmbeddingState, tree: &ClusterTree) -> Result<ObjectiveReport> {
    HbdmObjective::new(g, tree)?.nll(state)
}

/// Analytic gradient of [`hbdm_nll`] (memberships and weights held fixed).
pub fn hbdm_gradient(g: &Graph, state: &EmbeddingState, tree: &ClusterTree) -> Result<Gradient> {
    HbdmObjective::new(g, tree)?.gradient(state)
}

/// Rotates the members of `leaf` about its centroid by `angle` (D = 2) and
/// evaluates the objective before and after with the tree's stored
/// centroids.
pub fn rotation_sensitivity(
    g: &Graph,
    state: &EmbeddingState,
    tree: &ClusterTree,
    leaf: usize,
    angle: f64,
) -> Result<(f64, f64)> {
    if state.dim() != 2 {
        return Err(HbdmError::Unsupported(
            "rotation probe needs a two-dimensional embedding".into(),
        ));
    }
    let node = tree
        .nodes()
        .get(leaf)
        .filter(|n| n.is_leaf)
        .ok_or_else(|| HbdmError::InvalidArgument(format!("{leaf} is not a leaf cluster")))?;
    let obj = HbdmObjective::new(g, tree)?.with_centroid_mode(CentroidMode::Detached);
    let before = obj.nll(state)?.total_nll;
    let mu = tree.centroid_for(leaf, state.z());
    let (s, c) = angle.sin_cos();
    let mut rotated = state.clone();
    let z = rotated.z_mut();
    for &m in &node.members {
        let (x, y) = (z[2 * m] - mu[0], z[2 * m + 1] - mu[1]);
        z[2 * m] = mu[0] + c * x - s * y;
        z[2 * m + 1] = mu[1] + s * x + c * y;
    }
    let after = obj.nll(&rotated)?.total_nll;
    Ok((before, after))
}
