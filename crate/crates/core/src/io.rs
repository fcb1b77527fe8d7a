//! Embedding CSV files, node label files and tree JSON.
//!
//! Embedding files have the header `node_label,gamma,z_1,...,z_D` and one row
//! per node. Bipartite graphs write one file per mode; directed graphs write
//! the source rows and the target rows to separate files in the same way.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use crate::error::{HbdmError, Result};
use crate::graph::{Graph, GraphMode};
use crate::hierarchy::{ClusterTree, TreeExport};
use crate::model::{EmbeddingState, Layout};

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub labels: Vec<String>,
    pub gamma: Vec<f64>,
    pub dim: usize,
    /// Row-major `labels.len() x dim`.
    pub z: Vec<f64>,
}

impl EmbeddingTable {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Floats use the shortest representation that reads back exactly.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["node_label".to_string(), "gamma".to_string()];
        header.extend((1..=self.dim).map(|k| format!("z_{k}")));
        w.write_record(&header)?;
        for (r, label) in self.labels.iter().enumerate() {
            let mut rec = vec![label.clone(), self.gamma[r].to_string()];
            rec.extend(
                self.z[r * self.dim..(r + 1) * self.dim]
                    .iter()
                    .map(|v| v.to_string()),
            );
            w.write_record(&rec)?;
        }
        Ok(String::from_utf8(w.into_inner().map_err(|e| e.into_error())?).expect("utf-8"))
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_csv()?)?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let parse_err = |line: usize, msg: String| HbdmError::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)?;
        let header = rdr.headers()?.clone();
        let dim = header.len().saturating_sub(2);
        let expected: Vec<String> = ["node_label".to_string(), "gamma".to_string()]
            .into_iter()
            .chain((1..=dim).map(|k| format!("z_{k}")))
            .collect();
        if dim == 0 || header.iter().ne(expected.iter().map(String::as_str)) {
            return Err(parse_err(
                1,
                format!("expected header {}", expected.join(",")),
            ));
        }
        let mut t = EmbeddingTable {
            labels: Vec::new(),
            gamma: Vec::new(),
            dim,
            z: Vec::new(),
        };
        for (k, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let line = k + 2;
            if rec.len() != dim + 2 {
                return Err(parse_err(
                    line,
                    format!("expected {} fields, found {}", dim + 2, rec.len()),
                ));
            }
            let num = |s: &str| -> Result<f64> {
                let v: f64 = s
                    .parse()
                    .map_err(|_| parse_err(line, format!("'{s}' is not a number")))?;
                if !v.is_finite() {
                    return Err(parse_err(line, format!("non-finite value '{s}'")));
                }
                Ok(v)
            };
            t.labels.push(rec[0].to_string());
            t.gamma.push(num(&rec[1])?);
            for f in rec.iter().skip(2) {
                t.z.push(num(f)?);
            }
        }
        Ok(t)
    }
}

/// Splits a state into its per-file tables, labelled from `g`.
pub fn embedding_tables(g: &Graph, state: &EmbeddingState) -> Result<Vec<EmbeddingTable>> {
    if g.layout() != state.layout() {
        return Err(HbdmError::Mismatch(
            "state does not belong to this graph".into(),
        ));
    }
    let dim = state.dim();
    let table = |labels: &[String], first_row: usize| EmbeddingTable {
        labels: labels.to_vec(),
        gamma: state.effects()[first_row..first_row + labels.len()].to_vec(),
        dim,
        z: state.z()[first_row * dim..(first_row + labels.len()) * dim].to_vec(),
    };
    Ok(match g.mode() {
        GraphMode::Undirected => vec![table(g.labels(1), 0)],
        GraphMode::Directed => vec![table(g.labels(1), 0), table(g.labels(1), g.n1())],
        GraphMode::Bipartite => vec![table(g.labels(1), 0), table(g.labels(2), g.n1())],
    })
}

/// Reassembles a state for `g` from tables in the order produced by
/// [`embedding_tables`]. Rows are matched by label, so file order is free.
pub fn state_from_tables(
    g: &Graph,
    tables: &[EmbeddingTable],
    global_bias: bool,
) -> Result<EmbeddingState> {
    let layout = g.layout();
    let need = if layout.is_two_set() { 2 } else { 1 };
    if tables.len() != need {
        return Err(HbdmError::Mismatch(format!(
            "{} mode needs {need} embedding file(s)",
            g.mode()
        )));
    }
    let dim = tables[0].dim;
    if tables.iter().any(|t| t.dim != dim) {
        return Err(HbdmError::Mismatch(
            "embedding files disagree on the dimension".into(),
        ));
    }
    let mut z = vec![0.0; layout.rows() * dim];
    let mut effects = vec![0.0; layout.rows()];
    let sides: Vec<(u8, usize)> = match g.mode() {
        GraphMode::Undirected => vec![(1, 0)],
        GraphMode::Directed => vec![(1, 0), (1, g.n1())],
        GraphMode::Bipartite => vec![(1, 0), (2, g.n1())],
    };
    for (t, &(side, offset)) in tables.iter().zip(&sides) {
        let size = g.labels(side).len();
        let mut filled = vec![false; size];
        for (r, label) in t.labels.iter().enumerate() {
            if let Some(id) = g.id_of(label, side) {
                let row = offset + id;
                z[row * dim..(row + 1) * dim].copy_from_slice(&t.z[r * dim..(r + 1) * dim]);
                effects[row] = t.gamma[r];
                filled[id] = true;
            }
        }
        let missing: Vec<String> = (0..size)
            .filter(|&i| !filled[i])
            .map(|i| g.labels(side)[i].clone())
            .collect();
        if !missing.is_empty() {
            return Err(HbdmError::Mismatch(format!(
                "{} node(s) have no embedding row, e.g. {}",
                missing.len(),
                missing
                    .iter()
                    .take(5)
                    .cloned()
                    .collect::<Vec<_>>()
                    .join(", ")
            )));
        }
    }
    if global_bias {
        let b = effects.first().copied().unwrap_or(0.0);
        if effects.iter().any(|&e| e != b) {
            return Err(HbdmError::InvalidArgument(
                "global-bias state needs identical gamma values".into(),
            ));
        }
    }
    EmbeddingState::new(layout, dim, z, effects, global_bias)
}

/// One entry of a label file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelEntry {
    pub node: String,
    pub classes: Vec<String>,
}

/// Reads `node_label<TAB>class[,class...]`; blank lines and `#` comments are
/// skipped. Any whitespace run separates the two columns.
pub fn read_label_file(path: impl AsRef<Path>) -> Result<Vec<LabelEntry>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |msg: &str| HbdmError::Parse {
            path: path.to_path_buf(),
            line: k + 1,
            msg: msg.to_string(),
        };
        let (node, rest) = line
            .split_once(char::is_whitespace)
            .ok_or_else(|| err("expected a node label and a class"))?;
        let classes: Vec<String> = rest
            .trim()
            .split(',')
            .map(|c| c.trim().to_string())
            .filter(|c| !c.is_empty())
            .collect();
        if classes.is_empty() {
            return Err(err("no class given"));
        }
        out.push(LabelEntry {
            node: node.to_string(),
            classes,
        });
    }
    Ok(out)
}

/// Class assignment aligned with a list of node labels.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedLabels {
    /// Class ids per node, sorted and deduplicated.
    pub classes: Vec<Vec<usize>>,
    /// Class names indexed by id, in sorted order.
    pub names: Vec<String>,
    /// Entries whose node is not among `nodes`.
    pub unused: usize,
}

/// Aligns label entries to `nodes`. Every node must be labelled; the error
/// lists the unlabelled ones.
pub fn align_labels(nodes: &[String], entries: &[LabelEntry]) -> Result<AlignedLabels> {
    let names: Vec<String> = entries
        .iter()
        .flat_map(|e| e.classes.iter().cloned())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let class_id: HashMap<&str, usize> = names
        .iter()
        .enumerate()
        .map(|(i, n)| (n.as_str(), i))
        .collect();
    let index: HashMap<&str, usize> = nodes
        .iter()
        .enumerate()
        .map(|(i, n)| (n.as_str(), i))
        .collect();
    let mut classes: Vec<Option<BTreeSet<usize>>> = vec![None; nodes.len()];
    let mut unused = 0;
    for e in entries {
        match index.get(e.node.as_str()) {
            Some(&i) => classes[i]
                .get_or_insert_with(BTreeSet::new)
                .extend(e.classes.iter().map(|c| class_id[c.as_str()])),
            None => unused += 1,
        }
    }
    let missing: Vec<String> = classes
        .iter()
        .zip(nodes)
        .filter(|(c, _)| c.is_none())
        .map(|(_, n)| n.clone())
        .collect();
    if !missing.is_empty() {
        return Err(HbdmError::MissingLabels(missing));
    }
    Ok(AlignedLabels {
        classes: classes
            .into_iter()
            .map(|c| c.unwrap().into_iter().collect())
            .collect(),
        names,
        unused,
    })
}

/// Per-node feature rows for classification: the node's row for undirected
/// graphs, mode-1 rows for bipartite graphs, and source and target rows side
/// by side for directed graphs. Returns `(labels, points, dim)`.
pub fn node_features(g: &Graph, state: &EmbeddingState) -> Result<(Vec<String>, Vec<f64>, usize)> {
    if g.layout() != state.layout() {
        return Err(HbdmError::Mismatch(
            "state does not belong to this graph".into(),
        ));
    }
    let d = state.dim();
    let n = g.n1();
    Ok(match state.layout() {
        Layout::TwoSet {
            exclude_self: true, ..
        } => {
            let mut pts = Vec::with_capacity(n * 2 * d);
            for i in 0..n {
                pts.extend_from_slice(state.point(i));
                pts.extend_from_slice(state.point(n + i));
            }
            (g.labels(1).to_vec(), pts, 2 * d)
        }
        _ => (g.labels(1).to_vec(), state.z()[..n * d].to_vec(), d),
    })
}

pub fn tree_to_json(tree: &ClusterTree, run_id: Option<&str>) -> Result<String> {
    let mut export = tree.to_export();
    export.run_id = run_id.map(str::to_string);
    Ok(serde_json::to_string_pretty(&export)?)
}

pub fn read_tree_json(path: impl AsRef<Path>, state: &EmbeddingState) -> Result<ClusterTree> {
    let export: TreeExport = serde_json::from_str(&fs::read_to_string(path)?)?;
    ClusterTree::from_export(&export, state.z(), state.layout())
}
