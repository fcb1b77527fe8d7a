//! Dendrograms, hierarchy-ordered adjacency plots and embedding scatters.
//!
//! Everything here works on embedding rows (see [`crate::model::Layout`]).
//! Output is plain SVG and CSV text so repeated runs give identical bytes.

use std::collections::HashMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{HbdmError, Result};
use crate::graph::{Graph, GraphMode};
use crate::hierarchy::tree::weiszfeld_center;
use crate::hierarchy::ClusterTree;
use crate::model::EmbeddingState;
use crate::numeric::euclid;

/// Value used for `log2(0)`.
pub const LOG2_SED_FLOOR: f64 = -40.0;

const MEDIAN_ITERS: usize = 30;

const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22", "#17becf",
];

fn row(points: &[f64], dim: usize, i: usize) -> &[f64] {
    &points[i * dim..(i + 1) * dim]
}

/// Binary log of the summed member-to-centroid distances.
pub fn log2_sed(points: &[f64], dim: usize, members: &[usize], centroid: &[f64]) -> Result<f64> {
    if members.is_empty() {
        return Err(HbdmError::InvalidArgument(
            "Log2-SED of an empty cluster".into(),
        ));
    }
    let s: f64 = members
        .iter()
        .map(|&m| euclid(row(points, dim, m), centroid))
        .sum();
    Ok(if s > 0.0 {
        s.log2().max(LOG2_SED_FLOOR)
    } else {
        LOG2_SED_FLOOR
    })
}

/// Geometric median of the given rows (Weiszfeld from the mean).
pub fn geometric_median(points: &[f64], dim: usize, members: &[usize]) -> Vec<f64> {
    weiszfeld_center(points, dim, members, MEDIAN_ITERS).1
}

/// Mean distance of the members of `A ∪ B` to the union's geometric median.
pub fn delta_linkage(points: &[f64], dim: usize, a: &[usize], b: &[usize]) -> f64 {
    let mut union: Vec<usize> = a.iter().chain(b).copied().collect();
    union.sort_unstable();
    let mu = geometric_median(points, dim, &union);
    union
        .iter()
        .map(|&m| euclid(row(points, dim, m), &mu))
        .sum::<f64>()
        / union.len() as f64
}

/// One agglomeration step. Inputs are numbered `0..k`; the cluster formed by
/// merge `t` gets number `k + t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub left: usize,
    pub right: usize,
    pub delta: f64,
}

/// Agglomerates clusters by smallest Δ-linkage; ties go to the pair with the
/// lowest cluster numbers.
pub fn agglomerate(points: &[f64], dim: usize, clusters: &[Vec<usize>]) -> Vec<Merge> {
    let mut active: Vec<(usize, Vec<usize>)> = clusters.iter().cloned().enumerate().collect();
    let mut cache: HashMap<(usize, usize), f64> = HashMap::new();
    let mut merges = Vec::new();
    let mut next = clusters.len();
    while active.len() > 1 {
        let missing: Vec<(usize, usize)> = (0..active.len())
            .flat_map(|x| (x + 1..active.len()).map(move |y| (x, y)))
            .filter(|&(x, y)| !cache.contains_key(&(active[x].0, active[y].0)))
            .collect();
        let fresh: Vec<((usize, usize), f64)> = missing
            .par_iter()
            .map(|&(x, y)| {
                (
                    (active[x].0, active[y].0),
                    delta_linkage(points, dim, &active[x].1, &active[y].1),
                )
            })
            .collect();
        cache.extend(fresh);
        let mut best = (0, 1);
        let mut best_key = (f64::INFINITY, usize::MAX, usize::MAX);
        for x in 0..active.len() {
            for y in x + 1..active.len() {
                let (a, b) = (active[x].0, active[y].0);
                let key = (cache[&(a, b)], a, b);
                if key.0 < best_key.0
                    || (key.0 == best_key.0 && (key.1, key.2) < (best_key.1, best_key.2))
                {
                    best_key = key;
                    best = (x, y);
                }
            }
        }
        let (y_id, y_mem) = active.remove(best.1);
        let (x_id, x_mem) = active.remove(best.0);
        let mut mem = x_mem;
        mem.extend(y_mem);
        mem.sort_unstable();
        merges.push(Merge {
            left: x_id,
            right: y_id,
            delta: best_key.0,
        });
        active.push((next, mem));
        next += 1;
    }
    merges
}

/// Leaf sequence of the binary tree described by `merges` over `k` inputs.
fn merge_order(k: usize, merges: &[Merge]) -> Vec<usize> {
    if merges.is_empty() {
        return (0..k).collect();
    }
    let mut out = Vec::with_capacity(k);
    let mut stack = vec![k + merges.len() - 1];
    while let Some(c) = stack.pop() {
        if c < k {
            out.push(c);
        } else {
            let m = &merges[c - k];
            stack.push(m.right);
            stack.push(m.left);
        }
    }
    out
}

fn top_clusters(tree: &ClusterTree) -> Vec<usize> {
    let root = tree.root();
    if root.children.is_empty() {
        vec![root.id]
    } else {
        root.children.clone()
    }
}

fn check_tree(tree: &ClusterTree, z: &[f64]) -> Result<()> {
    if z.len() != tree.n_points() * tree.dim() {
        return Err(HbdmError::Mismatch(format!(
            "embedding has {} values, tree expects {} x {}",
            z.len(),
            tree.n_points(),
            tree.dim()
        )));
    }
    Ok(())
}

fn expand(tree: &ClusterTree, node: usize, out: &mut Vec<usize>) {
    let n = tree.node(node);
    if n.children.is_empty() {
        out.extend_from_slice(&n.members);
    } else {
        for &c in &n.children {
            expand(tree, c, out);
        }
    }
}

/// Row order: top clusters in agglomeration order, then the tree's own child
/// order, then row id inside leaves.
pub fn order_nodes(tree: &ClusterTree, z: &[f64]) -> Result<Vec<usize>> {
    check_tree(tree, z)?;
    let top = top_clusters(tree);
    let members: Vec<Vec<usize>> = top.iter().map(|&t| tree.node(t).members.clone()).collect();
    let merges = agglomerate(z, tree.dim(), &members);
    let mut out = Vec::with_capacity(tree.n_points());
    for c in merge_order(top.len(), &merges) {
        expand(tree, top[c], &mut out);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DendroKind {
    /// A single embedding row.
    Point,
    /// A node of the divisive tree.
    Cluster,
    /// An agglomerative merge of top-level clusters.
    Merge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DendroNode {
    pub node: usize,
    /// Log2-SED, raised where needed so no child sits above its parent.
    pub height: f64,
    pub children: Vec<usize>,
    pub kind: DendroKind,
    pub size: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub label: Option<String>,
    /// Tree node id for clusters.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub cluster: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dendrogram {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub run_id: Option<String>,
    pub root: usize,
    pub nodes: Vec<DendroNode>,
    /// Rows in display order.
    pub leaf_order: Vec<usize>,
    pub merges: Vec<Merge>,
}

impl Dendrogram {
    /// Builds the combined dendrogram: Δ-linkage merges over the top-level
    /// clusters, the divisive tree below them, and one leaf per row. Merge
    /// heights are the Log2-SED of the merged cluster about its geometric
    /// median.
    pub fn build(tree: &ClusterTree, z: &[f64], labels: Option<&[String]>) -> Result<Self> {
        check_tree(tree, z)?;
        let n = tree.n_points();
        let dim = tree.dim();
        if labels.is_some_and(|l| l.len() != n) {
            return Err(HbdmError::Mismatch(
                "label count differs from row count".into(),
            ));
        }
        let mut nodes: Vec<DendroNode> = (0..n)
            .map(|r| DendroNode {
                node: r,
                height: LOG2_SED_FLOOR,
                children: Vec::new(),
                kind: DendroKind::Point,
                size: 1,
                label: labels.map(|l| l[r].clone()),
                cluster: None,
            })
            .collect();

        let top = top_clusters(tree);
        let replace_root = top.len() > 1;
        let mut index = vec![usize::MAX; tree.nodes().len()];
        for t in tree.nodes() {
            if replace_root && t.id == 0 {
                continue;
            }
            index[t.id] = nodes.len();
            let centroid = tree.centroid_for(t.id, z);
            nodes.push(DendroNode {
                node: nodes.len(),
                height: log2_sed(z, dim, &t.members, &centroid)?,
                children: Vec::new(),
                kind: DendroKind::Cluster,
                size: t.members.len(),
                label: None,
                cluster: Some(t.id),
            });
        }
        for t in tree.nodes().iter().rev() {
            if index[t.id] == usize::MAX {
                continue;
            }
            let kids: Vec<usize> = if t.children.is_empty() {
                t.members.clone()
            } else {
                t.children.iter().map(|&c| index[c]).collect()
            };
            let lift = kids
                .iter()
                .map(|&k| nodes[k].height)
                .fold(f64::NEG_INFINITY, f64::max);
            let me = &mut nodes[index[t.id]];
            me.height = me.height.max(lift);
            me.children = kids;
        }

        let members: Vec<Vec<usize>> = top.iter().map(|&t| tree.node(t).members.clone()).collect();
        let merges = if replace_root {
            agglomerate(z, dim, &members)
        } else {
            Vec::new()
        };
        let mut slot: Vec<usize> = top.iter().map(|&t| index[t]).collect();
        let mut union = members;
        for m in &merges {
            let mut mem = union[m.left].clone();
            mem.extend_from_slice(&union[m.right]);
            mem.sort_unstable();
            let mu = geometric_median(z, dim, &mem);
            let (l, r) = (slot[m.left], slot[m.right]);
            let h = log2_sed(z, dim, &mem, &mu)?
                .max(nodes[l].height)
                .max(nodes[r].height);
            slot.push(nodes.len());
            nodes.push(DendroNode {
                node: nodes.len(),
                height: h,
                children: vec![l, r],
                kind: DendroKind::Merge,
                size: mem.len(),
                label: None,
                cluster: None,
            });
            union.push(mem);
        }
        let root = nodes.len() - 1;
        let leaf_order = order_nodes(tree, z)?;
        Ok(Self {
            run_id: None,
            root,
            nodes,
            leaf_order,
            merges,
        })
    }

    pub fn num_leaves(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| n.kind == DendroKind::Point)
            .count()
    }

    /// Newick string with branch lengths equal to height differences. Rows
    /// without labels are named by their row id.
    pub fn to_newick(&self) -> String {
        fn name(n: &DendroNode) -> String {
            let raw = n.label.clone().unwrap_or_else(|| n.node.to_string());
            if raw.chars().any(|c| "()[]':;, \t".contains(c)) {
                format!("'{}'", raw.replace('\'', "''"))
            } else {
                raw
            }
        }
        fn walk(d: &Dendrogram, id: usize, parent_h: Option<f64>, out: &mut String) {
            let n = &d.nodes[id];
            if n.kind == DendroKind::Point {
                out.push_str(&name(n));
            } else {
                out.push('(');
                for (k, &c) in n.children.iter().enumerate() {
                    if k > 0 {
                        out.push(',');
                    }
                    walk(d, c, Some(n.height), out);
                }
                out.push(')');
            }
            if let Some(p) = parent_h {
                let _ = write!(out, ":{:.6}", (p - n.height).max(0.0));
            }
        }
        let mut s = String::new();
        walk(self, self.root, None, &mut s);
        s.push(';');
        s
    }

    /// Cluster-level drawing: leaf clusters along the x axis, Log2-SED on the
    /// y axis; merges above the divisive tree are drawn in red.
    pub fn to_svg(&self) -> String {
        let (w, h, m) = (900.0, 500.0, 40.0);
        let mut leaves = Vec::new();
        let mut stack = vec![self.root];
        while let Some(id) = stack.pop() {
            let n = &self.nodes[id];
            let inner: Vec<usize> = n
                .children
                .iter()
                .copied()
                .filter(|&c| self.nodes[c].kind != DendroKind::Point)
                .collect();
            if inner.is_empty() {
                leaves.push(id);
            } else {
                stack.extend(inner.iter().rev());
            }
        }
        let heights: Vec<f64> = self
            .nodes
            .iter()
            .filter(|n| n.kind != DendroKind::Point && n.height > LOG2_SED_FLOOR)
            .map(|n| n.height)
            .collect();
        let lo = heights.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = heights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let (lo, hi) = if lo.is_finite() && hi > lo {
            (lo, hi)
        } else {
            (0.0, 1.0)
        };
        let y = |v: f64| h - m - (v.max(lo) - lo) / (hi - lo) * (h - 2.0 * m);
        let step = (w - 2.0 * m) / leaves.len().max(1) as f64;
        let mut x = vec![f64::NAN; self.nodes.len()];
        for (k, &l) in leaves.iter().enumerate() {
            x[l] = m + step * (k as f64 + 0.5);
        }
        let mut svg = svg_open(w, h, self.run_id.as_deref());
        let _ = writeln!(
            svg,
            "<text x=\"{m}\" y=\"20\" font-family=\"sans-serif\" font-size=\"12\">Log2-SED {lo:.3} to {hi:.3}</text>"
        );
        self.draw(self.root, &mut x, &y, &mut svg);
        svg.push_str("</svg>\n");
        svg
    }

    fn draw(&self, id: usize, x: &mut [f64], y: &dyn Fn(f64) -> f64, svg: &mut String) {
        let n = &self.nodes[id];
        let inner: Vec<usize> = n
            .children
            .iter()
            .copied()
            .filter(|&c| self.nodes[c].kind != DendroKind::Point)
            .collect();
        if inner.is_empty() {
            return;
        }
        for &c in &inner {
            self.draw(c, x, y, svg);
        }
        let xs: Vec<f64> = inner.iter().map(|&c| x[c]).collect();
        x[id] = (xs[0] + xs[xs.len() - 1]) / 2.0;
        let colour = if n.kind == DendroKind::Merge {
            "#d62728"
        } else {
            "#333333"
        };
        let yp = y(n.height);
        for &c in &inner {
            let _ = writeln!(
                svg,
                "<line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"{colour}\" stroke-width=\"1\"/>",
                x[c],
                y(self.nodes[c].height),
                x[c],
                yp
            );
        }
        let _ = writeln!(
            svg,
            "<line x1=\"{:.2}\" y1=\"{yp:.2}\" x2=\"{:.2}\" y2=\"{yp:.2}\" stroke=\"{colour}\" stroke-width=\"1\"/>",
            xs[0],
            xs[xs.len() - 1]
        );
    }
}

fn svg_open(w: f64, h: f64, run_id: Option<&str>) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\"{}>",
        run_id.map(|r| format!(" data-run-id=\"{}\"", xml_escape(r))).unwrap_or_default()
    );
    if let Some(r) = run_id {
        let _ = writeln!(s, "<metadata>run_id={}</metadata>", xml_escape(r));
    }
    let _ = writeln!(s, "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>");
    s
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Half-open span of a cluster along the row and column axes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Boundary {
    pub cluster: usize,
    pub row_start: usize,
    pub row_end: usize,
    pub col_start: usize,
    pub col_end: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdjacencyImage {
    pub level: usize,
    pub n_rows: usize,
    pub n_cols: usize,
    /// Sorted `(row, col)` dot positions.
    pub dots: Vec<(usize, usize)>,
    pub boundaries: Vec<Boundary>,
    pub svg: String,
}

impl AdjacencyImage {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["row", "col"])?;
        for &(r, c) in &self.dots {
            w.write_record([r.to_string(), c.to_string()])?;
        }
        Ok(String::from_utf8(w.into_inner().map_err(|e| e.into_error())?).expect("utf-8"))
    }
}

/// Positions of each row of one axis under `order`.
fn axis_positions(
    order: &[usize],
    keep: impl Fn(usize) -> Option<usize>,
    size: usize,
) -> Result<Vec<usize>> {
    let mut pos = vec![usize::MAX; size];
    let mut next = 0;
    for &r in order {
        if let Some(local) = keep(r) {
            pos[local] = next;
            next += 1;
        }
    }
    if next != size || pos.contains(&usize::MAX) {
        return Err(HbdmError::InvalidArgument(
            "ordering is not a permutation of the rows".into(),
        ));
    }
    Ok(pos)
}

/// Dot plot of the adjacency matrix permuted by a row ordering, with the
/// clusters of tree level `level` outlined. Two-set graphs put the first set
/// on the vertical axis and the second on the horizontal one.
pub fn adjacency_image(
    g: &Graph,
    tree: &ClusterTree,
    order: &[usize],
    level: usize,
    run_id: Option<&str>,
) -> Result<AdjacencyImage> {
    if level > tree.height() {
        return Err(HbdmError::InvalidArgument(format!(
            "level {level} exceeds the tree height {}",
            tree.height()
        )));
    }
    let layout = g.layout();
    if tree.n_points() != layout.rows() || order.len() != layout.rows() {
        return Err(HbdmError::Mismatch(
            "ordering, tree and graph disagree on the number of rows".into(),
        ));
    }
    let off = layout.offset2();
    let (rows_pos, cols_pos, n_rows, n_cols) = if layout.is_two_set() {
        let n2 = layout.rows() - off;
        let r = axis_positions(order, |x| (x < off).then_some(x), off)?;
        let c = axis_positions(order, |x| (x >= off).then(|| x - off), n2)?;
        (r, c, off, n2)
    } else {
        let r = axis_positions(order, Some, layout.rows())?;
        (r.clone(), r, layout.rows(), layout.rows())
    };
    let mut dots: Vec<(usize, usize)> = Vec::with_capacity(2 * g.num_edges());
    for &(i, j) in g.edges() {
        dots.push((rows_pos[i], cols_pos[j]));
        if g.mode() == GraphMode::Undirected {
            dots.push((rows_pos[j], cols_pos[i]));
        }
    }
    dots.sort_unstable();
    dots.dedup();

    let mut boundaries = Vec::new();
    for c in tree.clusters_at_level(level) {
        let span = |pos: &[usize], pick: &dyn Fn(usize) -> Option<usize>| {
            let ps: Vec<usize> = tree
                .node(c)
                .members
                .iter()
                .filter_map(|&m| pick(m))
                .map(|l| pos[l])
                .collect();
            match (ps.iter().min(), ps.iter().max()) {
                (Some(&a), Some(&b)) => (a, b + 1),
                _ => (0, 0),
            }
        };
        let (rs, re, cs, ce) = if layout.is_two_set() {
            let (rs, re) = span(&rows_pos, &|m| (m < off).then_some(m));
            let (cs, ce) = span(&cols_pos, &|m| (m >= off).then(|| m - off));
            (rs, re, cs, ce)
        } else {
            let (a, b) = span(&rows_pos, &Some);
            (a, b, a, b)
        };
        boundaries.push(Boundary {
            cluster: c,
            row_start: rs,
            row_end: re,
            col_start: cs,
            col_end: ce,
        });
    }
    boundaries.sort_by_key(|b| (b.row_start, b.col_start, b.cluster));

    let side = 800.0;
    let scale = side / n_rows.max(n_cols).max(1) as f64;
    let dot = scale.max(0.6);
    let (w, h) = (n_cols as f64 * scale + 20.0, n_rows as f64 * scale + 20.0);
    let mut svg = svg_open(w.ceil(), h.ceil(), run_id);
    svg.push_str("<g transform=\"translate(10,10)\">\n<path fill=\"black\" d=\"");
    for &(r, c) in &dots {
        let _ = write!(
            svg,
            "M{:.2} {:.2}h{dot:.2}v{dot:.2}h-{dot:.2}z",
            c as f64 * scale,
            r as f64 * scale
        );
    }
    svg.push_str("\"/>\n");
    for b in &boundaries {
        if b.row_end == b.row_start || b.col_end == b.col_start {
            continue;
        }
        let _ = writeln!(
            svg,
            "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"none\" stroke=\"#d62728\" stroke-width=\"1\"/>",
            b.col_start as f64 * scale,
            b.row_start as f64 * scale,
            (b.col_end - b.col_start) as f64 * scale,
            (b.row_end - b.row_start) as f64 * scale
        );
    }
    svg.push_str("</g>\n</svg>\n");
    Ok(AdjacencyImage {
        level,
        n_rows,
        n_cols,
        dots,
        boundaries,
        svg,
    })
}

/// Deterministic colour for each distinct group id (sorted ascending, cycling
/// through a fixed palette).
pub fn group_colours(groups: &[usize]) -> HashMap<usize, &'static str> {
    let mut ids: Vec<usize> = groups.to_vec();
    ids.sort_unstable();
    ids.dedup();
    ids.into_iter()
        .enumerate()
        .map(|(k, g)| (g, PALETTE[k % PALETTE.len()]))
        .collect()
}

/// Group of each row under the top-level split of `tree`.
pub fn top_level_groups(tree: &ClusterTree) -> Vec<usize> {
    let mut out = vec![0; tree.n_points()];
    for (k, &t) in top_clusters(tree).iter().enumerate() {
        for &m in &tree.node(t).members {
            out[m] = k;
        }
    }
    out
}

/// All coordinates as CSV: `row,node_label,set,group,z_1..z_D`.
pub fn scatter_csv(
    state: &EmbeddingState,
    labels: Option<&[String]>,
    groups: Option<&[usize]>,
) -> Result<String> {
    let n = state.rows();
    if labels.is_some_and(|l| l.len() != n) || groups.is_some_and(|g| g.len() != n) {
        return Err(HbdmError::Mismatch(
            "labels or groups do not cover every row".into(),
        ));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec![
        "row".to_string(),
        "node_label".into(),
        "set".into(),
        "group".into(),
    ];
    header.extend((1..=state.dim()).map(|k| format!("z_{k}")));
    w.write_record(&header)?;
    let layout = state.layout();
    for r in 0..n {
        let mut rec = vec![
            r.to_string(),
            labels.map_or_else(|| r.to_string(), |l| l[r].clone()),
            if layout.in_second(r) { "2" } else { "1" }.to_string(),
            groups.map_or_else(String::new, |g| g[r].to_string()),
        ];
        rec.extend(state.point(r).iter().map(|v| format!("{v:.10}")));
        w.write_record(&rec)?;
    }
    Ok(String::from_utf8(w.into_inner().map_err(|e| e.into_error())?).expect("utf-8"))
}

/// 2-D scatter coloured by `groups`. Second-set rows of two-set layouts are
/// drawn as squares.
pub fn scatter_svg(
    state: &EmbeddingState,
    groups: Option<&[usize]>,
    run_id: Option<&str>,
) -> Result<String> {
    if state.dim() != 2 {
        return Err(HbdmError::Unsupported(format!(
            "scatter plots need D = 2 (got D = {}); use the CSV export instead",
            state.dim()
        )));
    }
    let n = state.rows();
    if groups.is_some_and(|g| g.len() != n) {
        return Err(HbdmError::Mismatch("groups do not cover every row".into()));
    }
    let z = state.z();
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for r in 0..n {
        for k in 0..2 {
            lo[k] = lo[k].min(z[2 * r + k]);
            hi[k] = hi[k].max(z[2 * r + k]);
        }
    }
    let span = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(1e-12);
    let (side, m) = (800.0, 20.0);
    let s = (side - 2.0 * m) / span;
    let colours = groups.map(group_colours).unwrap_or_default();
    let mut svg = svg_open(side, side, run_id);
    let layout = state.layout();
    for r in 0..n {
        let x = m + (z[2 * r] - lo[0]) * s;
        let y = side - m - (z[2 * r + 1] - lo[1]) * s;
        let fill = groups.map_or("#1f77b4", |g| colours[&g[r]]);
        if layout.in_second(r) {
            let _ = writeln!(
                svg,
                "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"3\" height=\"3\" fill=\"{fill}\"/>",
                x - 1.5,
                y - 1.5
            );
        } else {
            let _ = writeln!(
                svg,
                "<circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"1.5\" fill=\"{fill}\"/>"
            );
        }
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}
