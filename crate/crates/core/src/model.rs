//! Latent distance model state, Poisson rates and the exact O(N^2) likelihood.
//!
//! All node embeddings live in one row-major matrix. Unipartite graphs use one
//! row per node. Bipartite graphs stack the mode-1 rows `W` on top of the
//! mode-2 rows `V`; directed graphs stack source rows on top of target rows,
//! and the pair `(i, i)` between a node's own source and target is excluded.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{HbdmError, Result};
use crate::graph::Graph;
use crate::numeric::{guarded_exp, ordered_sum, soft_dist, REDUCE_CHUNK};

/// Default node cap for the exact likelihood.
pub const DEFAULT_EXACT_CAP: usize = 20_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Layout {
    Unipartite {
        n: usize,
    },
    /// Rows `0..n1` form the first set, rows `n1..n1+n2` the second. With
    /// `exclude_self`, row `i` and row `n1 + i` are never paired.
    TwoSet {
        n1: usize,
        n2: usize,
        exclude_self: bool,
    },
}

impl Layout {
    pub fn rows(&self) -> usize {
        match *self {
            Layout::Unipartite { n } => n,
            Layout::TwoSet { n1, n2, .. } => n1 + n2,
        }
    }

    /// Row offset of the second set (zero for unipartite layouts).
    pub fn offset2(&self) -> usize {
        match *self {
            Layout::Unipartite { .. } => 0,
            Layout::TwoSet { n1, .. } => n1,
        }
    }

    pub fn is_two_set(&self) -> bool {
        matches!(self, Layout::TwoSet { .. })
    }

    /// Whether `row` belongs to the second set.
    #[inline]
    pub fn in_second(&self, row: usize) -> bool {
        match *self {
            Layout::Unipartite { .. } => false,
            Layout::TwoSet { n1, .. } => row >= n1,
        }
    }

    /// Whether rows `a` and `b` form a modelled dyad.
    #[inline]
    pub fn is_pair(&self, a: usize, b: usize) -> bool {
        match *self {
            Layout::Unipartite { .. } => a != b,
            Layout::TwoSet {
                n1, exclude_self, ..
            } => {
                let (s, t) = if a < b { (a, b) } else { (b, a) };
                s < n1 && t >= n1 && !(exclude_self && t - n1 == s)
            }
        }
    }

    /// Number of modelled dyads.
    pub fn num_pairs(&self) -> usize {
        match *self {
            Layout::Unipartite { n } => n * n.saturating_sub(1) / 2,
            Layout::TwoSet {
                n1,
                n2,
                exclude_self,
            } => n1 * n2 - if exclude_self { n1.min(n2) } else { 0 },
        }
    }
}

/// Latent coordinates plus per-row random effects.
///
/// In global-bias mode every effect equals `0.5 * global_bias` and the single
/// scalar is the free parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingState {
    layout: Layout,
    dim: usize,
    z: Vec<f64>,
    effects: Vec<f64>,
    global_bias: bool,
}

/// Gradient with respect to the free parameters of an [`EmbeddingState`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub dz: Vec<f64>,
    /// Per-row effects, or a single entry (d/d global bias) in global-bias mode.
    pub deffects: Vec<f64>,
}

impl Gradient {
    pub fn flatten(&self) -> Vec<f64> {
        self.dz.iter().chain(&self.deffects).copied().collect()
    }

    /// Folds per-row effect derivatives into the free-parameter layout.
    pub(crate) fn from_rows(state: &EmbeddingState, dz: Vec<f64>, drow: Vec<f64>) -> Self {
        let deffects = if state.global_bias {
            vec![0.5 * ordered_sum(drow)]
        } else {
            drow
        };
        Self { dz, deffects }
    }
}

/// Negative log-likelihood split into its link, leaf and per-level block parts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveReport {
    pub total_nll: f64,
    pub link_term: f64,
    pub leaf_analytic_term: f64,
    pub block_terms_per_level: Vec<f64>,
    /// Exponents clamped by the overflow guard.
    pub clamped: usize,
}

impl ObjectiveReport {
    pub(crate) fn assemble(link: f64, leaf: f64, blocks: Vec<f64>, clamped: usize) -> Self {
        let total = -(link - leaf - ordered_sum(blocks.iter().copied()));
        Self {
            total_nll: total,
            link_term: link,
            leaf_analytic_term: leaf,
            block_terms_per_level: blocks,
            clamped,
        }
    }
}

impl EmbeddingState {
    pub fn new(
        layout: Layout,
        dim: usize,
        z: Vec<f64>,
        effects: Vec<f64>,
        global_bias: bool,
    ) -> Result<Self> {
        let rows = layout.rows();
        if dim == 0 {
            return Err(HbdmError::InvalidArgument(
                "dimension must be at least 1".into(),
            ));
        }
        if z.len() != rows * dim || effects.len() != rows {
            return Err(HbdmError::Mismatch(format!(
                "expected {rows}x{dim} coordinates and {rows} effects, got {} and {}",
                z.len(),
                effects.len()
            )));
        }
        let state = Self {
            layout,
            dim,
            z,
            effects,
            global_bias,
        };
        if global_bias && state.effects.iter().any(|&e| e != state.effects[0]) {
            return Err(HbdmError::InvalidArgument(
                "global-bias state with unequal effects".into(),
            ));
        }
        state.check_finite()?;
        Ok(state)
    }

    pub fn zeros(layout: Layout, dim: usize, global_bias: bool) -> Self {
        let rows = layout.rows();
        Self {
            layout,
            dim,
            z: vec![0.0; rows * dim],
            effects: vec![0.0; rows],
            global_bias,
        }
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> usize {
        self.layout.rows()
    }

    pub fn global_bias_mode(&self) -> bool {
        self.global_bias
    }

    pub fn z(&self) -> &[f64] {
        &self.z
    }

    pub fn z_mut(&mut self) -> &mut [f64] {
        &mut self.z
    }

    #[inline]
    pub fn point(&self, row: usize) -> &[f64] {
        &self.z[row * self.dim..(row + 1) * self.dim]
    }

    pub fn effects(&self) -> &[f64] {
        &self.effects
    }

    /// Sets a per-row effect. Rejected in global-bias mode.
    pub fn set_effect(&mut self, row: usize, value: f64) -> Result<()> {
        if self.global_bias {
            return Err(HbdmError::InvalidArgument(
                "effects are tied in global-bias mode".into(),
            ));
        }
        self.effects[row] = value;
        Ok(())
    }

    /// The scalar `gamma^g` in global-bias mode (twice any tied effect).
    pub fn global_bias(&self) -> Option<f64> {
        self.global_bias
            .then(|| 2.0 * self.effects.first().copied().unwrap_or(0.0))
    }

    pub fn set_global_bias(&mut self, value: f64) {
        self.effects.iter_mut().for_each(|e| *e = 0.5 * value);
    }

    pub fn num_params(&self) -> usize {
        self.z.len()
            + if self.global_bias {
                1
            } else {
                self.effects.len()
            }
    }

    /// Free parameters: coordinates followed by effects (or the global bias).
    pub fn params(&self) -> Vec<f64> {
        let mut p = self.z.clone();
        match self.global_bias() {
            Some(g) => p.push(g),
            None => p.extend_from_slice(&self.effects),
        }
        p
    }

    pub fn set_params(&mut self, p: &[f64]) {
        assert_eq!(p.len(), self.num_params(), "parameter length mismatch");
        let nz = self.z.len();
        self.z.copy_from_slice(&p[..nz]);
        if self.global_bias {
            self.set_global_bias(p[nz]);
        } else {
            self.effects.copy_from_slice(&p[nz..]);
        }
    }

    pub fn check_finite(&self) -> Result<()> {
        if let Some(k) = self.z.iter().position(|v| !v.is_finite()) {
            return Err(HbdmError::NonFinite(format!(
                "coordinate {} of row {}",
                k % self.dim,
                k / self.dim
            )));
        }
        if let Some(r) = self.effects.iter().position(|v| !v.is_finite()) {
            return Err(HbdmError::NonFinite(format!("effect of row {r}")));
        }
        Ok(())
    }

    /// Log-rate `b_a + b_b - d(z_a, z_b)` between two rows.
    #[inline]
    pub fn log_rate_rows(&self, a: usize, b: usize) -> f64 {
        self.effects[a] + self.effects[b] - soft_dist(self.point(a), self.point(b))
    }

    /// Row pair for a node pair in graph ids (second set offset applied).
    pub fn pair_rows(&self, i: usize, j: usize) -> Result<(usize, usize)> {
        let (n1, n2) = match self.layout {
            Layout::Unipartite { n } => (n, n),
            Layout::TwoSet { n1, n2, .. } => (n1, n2),
        };
        if i >= n1 {
            return Err(HbdmError::NodeOutOfRange {
                id: i,
                side: 1,
                size: n1,
            });
        }
        if j >= n2 {
            let side = if self.layout.is_two_set() { 2 } else { 1 };
            return Err(HbdmError::NodeOutOfRange {
                id: j,
                side,
                size: n2,
            });
        }
        let (a, b) = (i, j + self.layout.offset2());
        if !self.layout.is_pair(a, b) {
            return Err(HbdmError::InvalidArgument(format!(
                "({i}, {j}) is not a modelled dyad"
            )));
        }
        Ok((a, b))
    }

    pub(crate) fn check_graph(&self, g: &Graph) -> Result<()> {
        if g.layout() != self.layout {
            return Err(HbdmError::Mismatch(format!(
                "graph layout {:?} does not match state layout {:?}",
                g.layout(),
                self.layout
            )));
        }
        Ok(())
    }
}

/// Poisson rate `exp(b_i + b_j - ||z_i - z_j||)` between node `i` and node
/// `j` (for two-set layouts: `i` in the first set, `j` in the second).
pub fn poisson_rate(state: &EmbeddingState, i: usize, j: usize) -> Result<f64> {
    let (a, b) = state.pair_rows(i, j)?;
    let x = state.log_rate_rows(a, b);
    if !x.is_finite() {
        return Err(HbdmError::NonFinite(format!(
            "rate exponent for ({i}, {j})"
        )));
    }
    Ok(x.exp())
}

/// Rows paired with `row` in `layout`, as a range plus an optional excluded row.
fn partners(layout: Layout, row: usize) -> (std::ops::Range<usize>, Option<usize>) {
    match layout {
        Layout::Unipartite { n } => (0..n, Some(row)),
        Layout::TwoSet {
            n1,
            n2,
            exclude_self,
        } => {
            if row < n1 {
                (n1..n1 + n2, exclude_self.then_some(n1 + row))
            } else {
                (0..n1, exclude_self.then_some(row - n1))
            }
        }
    }
}

fn check_exact(g: &Graph, state: &EmbeddingState, cap: usize) -> Result<()> {
    state.check_graph(g)?;
    state.check_finite()?;
    let n = g.num_nodes();
    if n > cap {
        return Err(HbdmError::ExactCapExceeded { n, cap });
    }
    Ok(())
}

/// Link term `sum over edges of (b_i + b_j - d_ij)` over row pairs.
pub(crate) fn link_term(state: &EmbeddingState, row_edges: &[(usize, usize)]) -> f64 {
    let parts: Vec<f64> = row_edges
        .par_chunks(REDUCE_CHUNK)
        .map(|c| ordered_sum(c.iter().map(|&(a, b)| state.log_rate_rows(a, b))))
        .collect();
    ordered_sum(parts)
}

/// Adds the link-term gradient (of the negative log-likelihood) into `dz`/`drow`.
pub(crate) fn link_gradient(
    state: &EmbeddingState,
    row_edges: &[(usize, usize)],
    dz: &mut [f64],
    drow: &mut [f64],
) {
    let d = state.dim;
    for &(a, b) in row_edges {
        let (pa, pb) = (state.point(a), state.point(b));
        let dist = soft_dist(pa, pb);
        for k in 0..d {
            let u = (pa[k] - pb[k]) / dist;
            dz[a * d + k] += u;
            dz[b * d + k] -= u;
        }
        drow[a] -= 1.0;
        drow[b] -= 1.0;
    }
}

/// Exact negative log-likelihood with the default node cap.
pub fn full_ldm_nll(g: &Graph, state: &EmbeddingState) -> Result<f64> {
    full_ldm_report(g, state, DEFAULT_EXACT_CAP).map(|r| r.total_nll)
}

/// Exact negative log-likelihood, reported in the same shape as the
/// hierarchical objective (the whole non-link sum lands in the leaf term).
pub fn full_ldm_report(g: &Graph, state: &EmbeddingState, cap: usize) -> Result<ObjectiveReport> {
    check_exact(g, state, cap)?;
    let layout = state.layout;
    let first_rows = match layout {
        Layout::Unipartite { n } => n,
        Layout::TwoSet { n1, .. } => n1,
    };
    let rows: Vec<usize> = (0..first_rows).collect();
    let parts: Vec<(f64, usize)> = rows
        .par_chunks(64)
        .map(|chunk| {
            let mut s = 0.0;
            let mut clamped = 0;
            for &a in chunk {
                let (range, skip) = partners(layout, a);
                let start = if layout.is_two_set() {
                    range.start
                } else {
                    a + 1
                };
                for b in start..range.end {
                    if Some(b) == skip {
                        continue;
                    }
                    let (v, c) = guarded_exp(state.log_rate_rows(a, b));
                    s += v;
                    clamped += c as usize;
                }
            }
            (s, clamped)
        })
        .collect();
    let non_link = ordered_sum(parts.iter().map(|p| p.0));
    let clamped = parts.iter().map(|p| p.1).sum();
    let link = link_term(state, &g.row_edges());
    Ok(ObjectiveReport::assemble(
        link,
        non_link,
        Vec::new(),
        clamped,
    ))
}

pub fn full_ldm_gradient(g: &Graph, state: &EmbeddingState) -> Result<Gradient> {
    full_ldm_gradient_with_cap(g, state, DEFAULT_EXACT_CAP)
}

/// Analytic gradient of [`full_ldm_report`]. Each row's gradient is summed by
/// a single task, so the result does not depend on thread count.
pub fn full_ldm_gradient_with_cap(
    g: &Graph,
    state: &EmbeddingState,
    cap: usize,
) -> Result<Gradient> {
    check_exact(g, state, cap)?;
    let layout = state.layout;
    let d = state.dim;
    let rows = state.rows();
    let mut dz = vec![0.0; rows * d];
    let mut drow = vec![0.0; rows];
    dz.par_chunks_mut(d)
        .zip(drow.par_iter_mut())
        .enumerate()
        .for_each(|(a, (gz, gb))| {
            let (range, skip) = partners(layout, a);
            let pa = state.point(a);
            for b in range {
                if b == a || Some(b) == skip {
                    continue;
                }
                let pb = state.point(b);
                let dist = soft_dist(pa, pb);
                let (lam, clamped) = guarded_exp(state.effects[a] + state.effects[b] - dist);
                if clamped {
                    continue;
                }
                for k in 0..d {
                    gz[k] -= lam * (pa[k] - pb[k]) / dist;
                }
                *gb += lam;
            }
        });
    link_gradient(state, &g.row_edges(), &mut dz, &mut drow);
    Ok(Gradient::from_rows(state, dz, drow))
}

/// Removes the isometry ambiguity: centres the embedding, rotates onto its
/// principal axes (descending variance) and flips each axis so that its
/// largest-magnitude coordinate is positive. Both sets of a two-set layout
/// are transformed jointly, so all modelled distances are preserved.
pub fn canonicalize(state: &EmbeddingState) -> EmbeddingState {
    let d = state.dim;
    let n = state.rows();
    if n == 0 {
        return state.clone();
    }
    let mut mean = vec![0.0; d];
    for r in 0..n {
        for (m, x) in mean.iter_mut().zip(state.point(r)) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centred = DMatrix::from_fn(n, d, |r, k| state.z[r * d + k] - mean[k]);
    let cov = centred.transpose() * &centred;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut rotated = DMatrix::zeros(n, d);
    for (col, &src) in order.iter().enumerate() {
        let axis = eig.eigenvectors.column(src);
        let mut proj = &centred * axis;
        let mut best = 0;
        for r in 1..n {
            if proj[r].abs() > proj[best].abs() {
                best = r;
            }
        }
        if proj[best] < 0.0 {
            proj.neg_mut();
        }
        rotated.set_column(col, &proj);
    }
    let mut out = state.clone();
    for r in 0..n {
        for k in 0..d {
            out.z[r * d + k] = rotated[(r, k)];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::GraphMode;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn uni(z: Vec<f64>, effects: Vec<f64>, dim: usize) -> EmbeddingState {
        let n = effects.len();
        EmbeddingState::new(Layout::Unipartite { n }, dim, z, effects, false).unwrap()
    }

    #[test]
    fn rate_examples() {
        let s = uni(vec![0.0, 0.0, 0.0, 0.0], vec![0.0, 0.0], 2);
        assert!((poisson_rate(&s, 0, 1).unwrap() - 1.0).abs() < 1e-5);
        let s = uni(vec![0.0, 0.0, 2.0, 0.0], vec![1.0, 1.0], 2);
        assert!((poisson_rate(&s, 0, 1).unwrap() - 1.0).abs() < 1e-9);
        let s = uni(vec![0.0, 0.0, 3.0, 4.0], vec![0.0, 0.0], 2);
        let r = poisson_rate(&s, 0, 1).unwrap();
        assert!((r - (-5f64).exp()).abs() < 1e-12);
        assert!((r - 6.7379e-3).abs() < 1e-7);
        assert_eq!(poisson_rate(&s, 1, 0).unwrap(), r);
        assert!(poisson_rate(&s, 0, 0).is_err());
        assert!(poisson_rate(&s, 0, 2).is_err());
    }

    #[test]
    fn non_finite_state_rejected() {
        let r = EmbeddingState::new(
            Layout::Unipartite { n: 1 },
            1,
            vec![f64::NAN],
            vec![0.0],
            false,
        );
        assert!(matches!(r, Err(HbdmError::NonFinite(_))));
    }

    #[test]
    fn two_node_and_triangle_nll() {
        let g = Graph::from_edges(GraphMode::Undirected, 2, 0, [(0, 1)]).unwrap();
        let s = EmbeddingState::zeros(g.layout(), 2, false);
        // The distance floor perturbs the exact value by O(1e-6).
        assert!((full_ldm_nll(&g, &s).unwrap() - 1.0).abs() < 1e-5);
        let g = Graph::from_edges(GraphMode::Undirected, 3, 0, [(0, 1), (1, 2), (0, 2)]).unwrap();
        let s = EmbeddingState::zeros(g.layout(), 2, false);
        assert!((full_ldm_nll(&g, &s).unwrap() - 3.0).abs() < 1e-5);
    }

    #[test]
    fn cap_is_enforced() {
        let g = Graph::from_edges(GraphMode::Undirected, 5, 0, [(0, 1)]).unwrap();
        let s = EmbeddingState::zeros(g.layout(), 2, false);
        match full_ldm_report(&g, &s, 4) {
            Err(HbdmError::ExactCapExceeded { n: 5, cap: 4 }) => {}
            other => panic!("unexpected {other:?}"),
        }
        assert!(full_ldm_gradient_with_cap(&g, &s, 4).is_err());
    }

    #[test]
    fn single_node_zero_gradient() {
        let g = Graph::from_edges(GraphMode::Undirected, 1, 0, std::iter::empty()).unwrap();
        let s = EmbeddingState::zeros(g.layout(), 3, false);
        let grad = full_ldm_gradient(&g, &s).unwrap();
        assert!(grad.flatten().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn two_coincident_nodes_gradient() {
        // NLL = -(b0 + b1 - d) + exp(b0 + b1 - d); d/db_i = -(1 - lambda).
        let g = Graph::from_edges(GraphMode::Undirected, 2, 0, [(0, 1)]).unwrap();
        let s = uni(vec![0.5, -1.0, 0.5, -1.0], vec![0.2, -0.1], 2);
        let grad = full_ldm_gradient(&g, &s).unwrap();
        let lam = (0.1f64 - crate::numeric::EPS_DIST).exp();
        for &db in &grad.deffects {
            assert!((db + (1.0 - lam)).abs() < 1e-12);
        }
        assert!(grad.dz.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn global_bias_gradient_is_scalar() {
        let g = Graph::from_edges(GraphMode::Undirected, 3, 0, [(0, 1)]).unwrap();
        let mut s = EmbeddingState::zeros(g.layout(), 2, true);
        s.set_global_bias(0.4);
        assert_eq!(s.effects(), &[0.2, 0.2, 0.2]);
        assert_eq!(s.params().len(), 7);
        let grad = full_ldm_gradient(&g, &s).unwrap();
        assert_eq!(grad.deffects.len(), 1);
    }

    fn random_cloud(n: usize, seed: u64) -> EmbeddingState {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = (0..2 * n)
            .map(|_| rng.random_range(-3.0..3.0) * if rng.random_bool(0.5) { 1.0 } else { 0.3 })
            .collect();
        let e = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        uni(z, e, 2)
    }

    fn pairwise(s: &EmbeddingState) -> Vec<f64> {
        let n = s.rows();
        let mut out = Vec::new();
        for a in 0..n {
            for b in 0..n {
                out.push(crate::numeric::euclid(s.point(a), s.point(b)));
            }
        }
        out
    }

    #[test]
    fn canonicalize_preserves_distances_and_is_idempotent() {
        let s = random_cloud(40, 11);
        let c = canonicalize(&s);
        let before = pairwise(&s);
        let after = pairwise(&c);
        let worst = before
            .iter()
            .zip(&after)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(worst < 1e-9, "max distance change {worst}");
        let cc = canonicalize(&c);
        for (a, b) in c.z().iter().zip(cc.z()) {
            assert!((a - b).abs() < 1e-9);
        }
        assert_eq!(c.effects(), s.effects());
    }

    #[test]
    fn canonicalize_translation_invariant() {
        let s = random_cloud(25, 3);
        let mut t = s.clone();
        t.z_mut().iter_mut().for_each(|v| *v += 5.0);
        let (a, b) = (canonicalize(&s), canonicalize(&t));
        for (x, y) in a.z().iter().zip(b.z()) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn layout_pairs() {
        let l = Layout::TwoSet {
            n1: 3,
            n2: 3,
            exclude_self: true,
        };
        assert!(!l.is_pair(0, 3));
        assert!(l.is_pair(0, 4));
        assert!(!l.is_pair(0, 1));
        assert_eq!(l.num_pairs(), 6);
        assert_eq!(Layout::Unipartite { n: 5 }.num_pairs(), 10);
    }
}
