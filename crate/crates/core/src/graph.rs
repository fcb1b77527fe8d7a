//! Edge-list ingestion and the immutable [`Graph`] representation.
//!
//! Node labels are arbitrary strings; internal ids are assigned contiguously in
//! first-seen order. Undirected edges are stored as `(i, j)` with `i < j`,
//! directed edges as `(source, target)`, bipartite edges as `(mode1, mode2)`.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{HbdmError, Result};
use crate::model::Layout;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GraphMode {
    Undirected,
    Directed,
    Bipartite,
}

impl std::str::FromStr for GraphMode {
    type Err = HbdmError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "undirected" => Ok(Self::Undirected),
            "directed" => Ok(Self::Directed),
            "bipartite" => Ok(Self::Bipartite),
            other => Err(HbdmError::InvalidArgument(format!(
                "unknown graph mode '{other}'"
            ))),
        }
    }
}

impl std::fmt::Display for GraphMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Undirected => "undirected",
            Self::Directed => "directed",
            Self::Bipartite => "bipartite",
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct LoadReport {
    pub lines: usize,
    pub self_loops_dropped: usize,
    pub duplicates_collapsed: usize,
    pub weight_columns_ignored: usize,
    /// Nodes removed by giant-component extraction.
    pub nodes_dropped: usize,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LoadOptions {
    /// Keep only the largest (weakly) connected component.
    pub giant_component: bool,
}

#[derive(Debug, Clone)]
pub struct Graph {
    mode: GraphMode,
    n1: usize,
    n2: usize,
    edges: Vec<(usize, usize)>,
    labels1: Vec<String>,
    labels2: Vec<String>,
    index1: HashMap<String, usize>,
    index2: HashMap<String, usize>,
    // undirected: degree; directed: out-degree (side 1) / in-degree (side 2);
    // bipartite: per mode.
    deg1: Vec<usize>,
    deg2: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GraphStats {
    pub mode: GraphMode,
    pub n: usize,
    pub n1: usize,
    pub n2: usize,
    pub edges: usize,
    pub density: f64,
    pub degree_min: usize,
    pub degree_mean: f64,
    pub degree_max: usize,
}

impl Graph {
    /// Builds a graph over internal ids with numeric labels. Duplicates are
    /// collapsed; self-loops are rejected.
    pub fn from_edges(
        mode: GraphMode,
        n1: usize,
        n2: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self> {
        let labels1 = (0..n1).map(|i| i.to_string()).collect();
        let labels2 = match mode {
            GraphMode::Bipartite => (0..n2).map(|i| i.to_string()).collect(),
            _ => Vec::new(),
        };
        let edges: Vec<_> = edges.into_iter().collect();
        for &(i, j) in &edges {
            if mode != GraphMode::Bipartite && i == j {
                return Err(HbdmError::InvalidGraph(format!("self-loop on node {i}")));
            }
        }
        Self::assemble(mode, labels1, labels2, edges)
    }

    fn assemble(
        mode: GraphMode,
        labels1: Vec<String>,
        labels2: Vec<String>,
        raw: Vec<(usize, usize)>,
    ) -> Result<Self> {
        let n1 = labels1.len();
        let n2 = if mode == GraphMode::Bipartite {
            labels2.len()
        } else {
            0
        };
        let limit2 = if mode == GraphMode::Bipartite { n2 } else { n1 };
        let mut edges = Vec::with_capacity(raw.len());
        for (i, j) in raw {
            if i >= n1 {
                return Err(HbdmError::NodeOutOfRange {
                    id: i,
                    side: 1,
                    size: n1,
                });
            }
            if j >= limit2 {
                return Err(HbdmError::NodeOutOfRange {
                    id: j,
                    side: if mode == GraphMode::Bipartite { 2 } else { 1 },
                    size: limit2,
                });
            }
            edges.push(match mode {
                GraphMode::Undirected if i > j => (j, i),
                _ => (i, j),
            });
        }
        edges.sort_unstable();
        edges.dedup();

        let mut deg1 = vec![0; n1];
        let mut deg2 = vec![
            0;
            if mode == GraphMode::Undirected {
                0
            } else {
                limit2
            }
        ];
        for &(i, j) in &edges {
            deg1[i] += 1;
            match mode {
                GraphMode::Undirected => deg1[j] += 1,
                _ => deg2[j] += 1,
            }
        }
        let index1 = labels1
            .iter()
            .enumerate()
            .map(|(i, l)| (l.clone(), i))
            .collect();
        let index2 = labels2
            .iter()
            .enumerate()
            .map(|(i, l)| (l.clone(), i))
            .collect();
        Ok(Self {
            mode,
            n1,
            n2,
            edges,
            labels1,
            labels2: if mode == GraphMode::Bipartite {
                labels2
            } else {
                Vec::new()
            },
            index1,
            index2,
            deg1,
            deg2,
        })
    }

    /// Builds a graph from labelled pairs, assigning ids in first-seen order.
    pub fn from_labeled_edges<'a>(
        mode: GraphMode,
        pairs: impl IntoIterator<Item = (&'a str, &'a str)>,
    ) -> Result<(Self, LoadReport)> {
        let mut report = LoadReport::default();
        let mut labels1: Vec<String> = Vec::new();
        let mut labels2: Vec<String> = Vec::new();
        let mut index1: HashMap<String, usize> = HashMap::new();
        let mut index2: HashMap<String, usize> = HashMap::new();
        let mut raw = Vec::new();

        fn intern(labels: &mut Vec<String>, index: &mut HashMap<String, usize>, l: &str) -> usize {
            if let Some(&id) = index.get(l) {
                return id;
            }
            let id = labels.len();
            labels.push(l.to_string());
            index.insert(l.to_string(), id);
            id
        }

        for (a, b) in pairs {
            report.lines += 1;
            if mode != GraphMode::Bipartite && a == b {
                // Register the label so an isolated self-looped node is kept.
                intern(&mut labels1, &mut index1, a);
                report.self_loops_dropped += 1;
                continue;
            }
            let i = intern(&mut labels1, &mut index1, a);
            let j = if mode == GraphMode::Bipartite {
                intern(&mut labels2, &mut index2, b)
            } else {
                intern(&mut labels1, &mut index1, b)
            };
            raw.push((i, j));
        }
        if raw.is_empty() {
            return Err(HbdmError::InvalidGraph("empty edge set".into()));
        }
        let before = raw.len();
        let g = Self::assemble(mode, labels1, labels2, raw)?;
        report.duplicates_collapsed = before - g.edges.len();
        if report.self_loops_dropped > 0 {
            log::warn!("dropped {} self-loop(s)", report.self_loops_dropped);
        }
        Ok((g, report))
    }

    pub fn mode(&self) -> GraphMode {
        self.mode
    }

    /// Node count of mode 1 (all nodes for unipartite graphs).
    pub fn n1(&self) -> usize {
        self.n1
    }

    /// Node count of mode 2; zero unless bipartite.
    pub fn n2(&self) -> usize {
        self.n2
    }

    pub fn num_nodes(&self) -> usize {
        self.n1 + self.n2
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn labels(&self, side: u8) -> &[String] {
        if side == 2 {
            &self.labels2
        } else {
            &self.labels1
        }
    }

    pub fn id_of(&self, label: &str, side: u8) -> Option<usize> {
        if side == 2 {
            self.index2.get(label).copied()
        } else {
            self.index1.get(label).copied()
        }
    }

    /// Edge lookup in canonical orientation (undirected pairs may be given in
    /// either order).
    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        let key = match self.mode {
            GraphMode::Undirected if i > j => (j, i),
            _ => (i, j),
        };
        self.edges.binary_search(&key).is_ok()
    }

    /// Degree of `node` on `side`. Directed graphs report out-degree on side 1
    /// and in-degree on side 2.
    pub fn degree(&self, node: usize, side: u8) -> Result<usize> {
        let degs = match (side, self.mode) {
            (1, _) => &self.deg1,
            (2, _) => &self.deg2,
            _ => {
                return Err(HbdmError::InvalidArgument(format!(
                    "side must be 1 or 2, got {side}"
                )))
            }
        };
        degs.get(node).copied().ok_or(HbdmError::NodeOutOfRange {
            id: node,
            side,
            size: degs.len(),
        })
    }

    pub fn stats(&self) -> GraphStats {
        let n = self.num_nodes();
        let m = self.edges.len();
        let pairs = match self.mode {
            GraphMode::Undirected => n as f64 * (n as f64 - 1.0) / 2.0,
            GraphMode::Directed => n as f64 * (n as f64 - 1.0),
            GraphMode::Bipartite => self.n1 as f64 * self.n2 as f64,
        };
        let degrees: Vec<usize> = match self.mode {
            GraphMode::Undirected => self.deg1.clone(),
            GraphMode::Directed => self
                .deg1
                .iter()
                .zip(&self.deg2)
                .map(|(a, b)| a + b)
                .collect(),
            GraphMode::Bipartite => self.deg1.iter().chain(&self.deg2).copied().collect(),
        };
        let total: usize = degrees.iter().sum();
        GraphStats {
            mode: self.mode,
            n,
            n1: self.n1,
            n2: self.n2,
            edges: m,
            density: if pairs > 0.0 { m as f64 / pairs } else { 0.0 },
            degree_min: degrees.iter().copied().min().unwrap_or(0),
            degree_mean: if n > 0 { total as f64 / n as f64 } else { 0.0 },
            degree_max: degrees.iter().copied().max().unwrap_or(0),
        }
    }

    /// Row layout of the embedding matrix for this graph.
    pub fn layout(&self) -> Layout {
        match self.mode {
            GraphMode::Undirected => Layout::Unipartite { n: self.n1 },
            GraphMode::Directed => Layout::TwoSet {
                n1: self.n1,
                n2: self.n1,
                exclude_self: true,
            },
            GraphMode::Bipartite => Layout::TwoSet {
                n1: self.n1,
                n2: self.n2,
                exclude_self: false,
            },
        }
    }

    /// Edges mapped to rows of the embedding matrix (see [`Layout`]).
    pub fn row_edges(&self) -> Vec<(usize, usize)> {
        let off = self.layout().offset2();
        self.edges.iter().map(|&(i, j)| (i, j + off)).collect()
    }

    /// Edges as canonical label pairs, sorted; independent of id assignment.
    pub fn canonical_label_edges(&self) -> Vec<(String, String)> {
        let mut out: Vec<(String, String)> = self
            .edges
            .iter()
            .map(|&(i, j)| {
                let a = self.labels1[i].clone();
                let b = if self.mode == GraphMode::Bipartite {
                    self.labels2[j].clone()
                } else {
                    self.labels1[j].clone()
                };
                if self.mode == GraphMode::Undirected && b < a {
                    (b, a)
                } else {
                    (a, b)
                }
            })
            .collect();
        out.sort();
        out
    }

    /// Same node sets and labels with a different edge set.
    pub fn with_edges(&self, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        Self::assemble(
            self.mode,
            self.labels1.clone(),
            self.labels2.clone(),
            edges.into_iter().collect(),
        )
    }

    /// Neighbour lists of the undirected view over the combined node space
    /// (mode-2 ids offset by `n1`).
    pub fn undirected_adjacency(&self) -> Vec<Vec<usize>> {
        let off = if self.mode == GraphMode::Bipartite {
            self.n1
        } else {
            0
        };
        let mut adj = vec![Vec::new(); self.num_nodes()];
        for &(i, j) in &self.edges {
            adj[i].push(j + off);
            adj[j + off].push(i);
        }
        for a in &mut adj {
            a.sort_unstable();
            a.dedup();
        }
        adj
    }

    /// Weakly connected component id per node of the combined node space.
    pub fn components(&self) -> (usize, Vec<usize>) {
        let adj = self.undirected_adjacency();
        let mut comp = vec![usize::MAX; adj.len()];
        let mut count = 0;
        let mut stack = Vec::new();
        for s in 0..adj.len() {
            if comp[s] != usize::MAX {
                continue;
            }
            comp[s] = count;
            stack.push(s);
            while let Some(u) = stack.pop() {
                for &v in &adj[u] {
                    if comp[v] == usize::MAX {
                        comp[v] = count;
                        stack.push(v);
                    }
                }
            }
            count += 1;
        }
        (count, comp)
    }

    pub fn is_connected(&self) -> bool {
        self.components().0 <= 1
    }

    /// Restriction to the largest weakly connected component. Ids are
    /// re-assigned preserving relative order.
    pub fn giant_component(&self) -> Result<Self> {
        let (count, comp) = self.components();
        if count <= 1 {
            return Ok(self.clone());
        }
        let mut sizes = vec![0usize; count];
        for &c in &comp {
            sizes[c] += 1;
        }
        // Largest; ties go to the component seen first.
        let best = (0..count).fold(0, |b, c| if sizes[c] > sizes[b] { c } else { b });
        let off = if self.mode == GraphMode::Bipartite {
            self.n1
        } else {
            0
        };
        let remap = |range: std::ops::Range<usize>, shift: usize| {
            let mut map = vec![usize::MAX; range.len()];
            let mut next = 0;
            for (k, node) in range.enumerate() {
                if comp[node + shift] == best {
                    map[k] = next;
                    next += 1;
                }
            }
            map
        };
        let map1 = remap(0..self.n1, 0);
        let map2 = if self.mode == GraphMode::Bipartite {
            remap(0..self.n2, off)
        } else {
            Vec::new()
        };
        let keep = |labels: &[String], map: &[usize]| -> Vec<String> {
            labels
                .iter()
                .zip(map)
                .filter(|(_, &m)| m != usize::MAX)
                .map(|(l, _)| l.clone())
                .collect()
        };
        let labels1 = keep(&self.labels1, &map1);
        let labels2 = keep(&self.labels2, &map2);
        let edges = self
            .edges
            .iter()
            .filter(|&&(i, _)| map1[i] != usize::MAX)
            .map(|&(i, j)| {
                let j2 = if self.mode == GraphMode::Bipartite {
                    map2[j]
                } else {
                    map1[j]
                };
                (map1[i], j2)
            })
            .collect();
        Self::assemble(self.mode, labels1, labels2, edges)
    }
}

/// Reads a whitespace-separated edge list. Lines starting with `#` or `%` are
/// comments; a third (weight) column is accepted and ignored.
pub fn load_edge_list(path: impl AsRef<Path>, mode: GraphMode) -> Result<Graph> {
    load_edge_list_with(path, mode, LoadOptions::default()).map(|(g, _)| g)
}

pub fn load_edge_list_with(
    path: impl AsRef<Path>,
    mode: GraphMode,
    opts: LoadOptions,
) -> Result<(Graph, LoadReport)> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path)?);
    let mut pairs: Vec<(String, String)> = Vec::new();
    let mut weights = 0;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') || trimmed.starts_with('%') {
            continue;
        }
        let mut tokens = trimmed.split_whitespace();
        let (Some(a), Some(b)) = (tokens.next(), tokens.next()) else {
            return Err(HbdmError::Parse {
                path: path.to_path_buf(),
                line: lineno + 1,
                msg: format!("expected two node labels, got '{trimmed}'"),
            });
        };
        match tokens.next() {
            None => {}
            Some(_) if tokens.next().is_none() => weights += 1,
            Some(_) => {
                return Err(HbdmError::Parse {
                    path: path.to_path_buf(),
                    line: lineno + 1,
                    msg: format!("too many columns in '{trimmed}'"),
                })
            }
        }
        pairs.push((a.to_string(), b.to_string()));
    }
    let (mut g, mut report) =
        Graph::from_labeled_edges(mode, pairs.iter().map(|(a, b)| (a.as_str(), b.as_str())))?;
    report.weight_columns_ignored = weights;
    if opts.giant_component {
        let before = g.num_nodes();
        g = g.giant_component()?;
        report.nodes_dropped = before - g.num_nodes();
    }
    Ok((g, report))
}
