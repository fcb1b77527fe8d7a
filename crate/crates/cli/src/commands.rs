use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, Context, Result};
use hbdm::eval::{
    evaluate_link_prediction, knn_classify, make_split_with, KnnReport, SplitMeta, SplitOptions,
};
use hbdm::io::{
    align_labels, embedding_tables, node_features, read_label_file, read_tree_json,
    state_from_tables, tree_to_json, EmbeddingTable,
};
use hbdm::train::{fit, FitResult, TrainConfig, TrainError};
use hbdm::viz::{
    adjacency_image, order_nodes, scatter_csv, scatter_svg, top_level_groups, Dendrogram,
};
use hbdm::{load_edge_list_with, EmbeddingState, Graph, GraphMode, LoadOptions, LoadReport};
use serde::Serialize;

use crate::manifest::{run_id, sha256_hex, InputInfo, OutputDir, RunManifest};
use crate::{ClassifyArgs, EmbedArgs, InputArgs, LinkArgs, TrainArgs, VizArgs};

/// Bad flags or values; exits with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// Training produced a non-finite objective; exits with status 3.
#[derive(Debug)]
pub struct DivergedError {
    pub iter: usize,
    pub reason: String,
}

impl std::fmt::Display for DivergedError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "training diverged at iteration {}: {}; the last finite state was written",
            self.iter, self.reason
        )
    }
}

impl std::error::Error for DivergedError {}

const EMBEDDINGS: [&str; 2] = ["embeddings.csv", "embeddings_mode2.csv"];

pub fn resolve_config(t: &TrainArgs) -> Result<TrainConfig> {
    let mut cfg = match &t.config {
        Some(p) => {
            let text =
                fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            serde_json::from_str(&text)
                .map_err(|e| UsageError(format!("config {}: {e}", p.display())))?
        }
        None => TrainConfig::default(),
    };
    macro_rules! set {
        ($($f:ident),*) => { $(if let Some(v) = t.$f { cfg.$f = v; })* };
    }
    set!(
        dim,
        lr,
        iters,
        rebuild_every,
        random_effects,
        exact,
        exact_cap,
        seed,
        init_scale
    );
    cfg.validate().map_err(|e| UsageError(e.to_string()))?;
    Ok(cfg)
}

struct Loaded {
    graph: Graph,
    report: LoadReport,
    info: InputInfo,
}

fn load_input(a: &InputArgs) -> Result<Loaded> {
    let bytes = fs::read(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let (graph, report) = load_edge_list_with(
        &a.input,
        a.mode,
        LoadOptions {
            giant_component: a.giant_component,
        },
    )?;
    let path = fs::canonicalize(&a.input).unwrap_or_else(|_| a.input.clone());
    let info = InputInfo {
        path: path.display().to_string(),
        sha256: sha256_hex(&bytes),
        mode: a.mode.to_string(),
        giant_component: a.giant_component,
    };
    Ok(Loaded {
        graph,
        report,
        info,
    })
}

fn id_for(command: &str, info: &InputInfo, cfg: &TrainConfig, extra: &str) -> Result<String> {
    let cfg_json = serde_json::to_string(cfg)?;
    Ok(run_id(&[
        command,
        &info.sha256,
        &info.mode,
        &info.giant_component.to_string(),
        &cfg_json,
        extra,
    ]))
}

/// Trains, mapping divergence to the last finite state plus a pending error.
fn train(g: &Graph, cfg: &TrainConfig) -> Result<(FitResult, Option<DivergedError>)> {
    match fit(g, cfg) {
        Ok(r) => Ok((r, None)),
        Err(TrainError::Diverged { iter, reason, last }) => {
            log::error!("training diverged at iteration {iter}: {reason}");
            Ok((*last, Some(DivergedError { iter, reason })))
        }
        Err(TrainError::Model(e)) => Err(e.into()),
    }
}

fn write_fit(out: &mut OutputDir, g: &Graph, res: &FitResult, id: &str) -> Result<()> {
    for (name, table) in EMBEDDINGS.iter().zip(embedding_tables(g, &res.state)?) {
        out.write(name, table.to_csv()?)?;
    }
    out.write("tree.json", tree_to_json(&res.tree, Some(id))?)?;
    let mut log = String::new();
    for rec in &res.log {
        log.push_str(&serde_json::to_string(rec)?);
        log.push('\n');
    }
    out.write("train.log.jsonl", log)?;
    Ok(())
}

fn load_embeddings(dir: &Path, g: &Graph) -> Result<EmbeddingState> {
    let count = if g.layout().is_two_set() { 2 } else { 1 };
    let mut tables = Vec::new();
    for name in &EMBEDDINGS[..count] {
        let p = dir.join(name);
        if !p.exists() {
            return Err(anyhow!("missing embeddings file {}", p.display()));
        }
        tables.push(EmbeddingTable::read(&p)?);
    }
    Ok(state_from_tables(g, &tables, false)?)
}

#[allow(clippy::too_many_arguments)]
fn finish(
    mut out: OutputDir,
    id: String,
    command: &str,
    loaded: &Loaded,
    cfg: &TrainConfig,
    status: &str,
    timings: BTreeMap<String, f64>,
) -> Result<()> {
    let manifest = RunManifest {
        run_id: id,
        command: command.to_string(),
        software_version: env!("CARGO_PKG_VERSION").to_string(),
        status: status.to_string(),
        seed: cfg.seed,
        input: loaded.info.clone(),
        graph: loaded.graph.stats(),
        load_report: loaded.report.clone(),
        config: cfg.clone(),
        outputs: out.entries.clone(),
        timings_ms: timings,
    };
    out.write("manifest.json", serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

pub fn embed(a: &EmbedArgs) -> Result<()> {
    let cfg = resolve_config(&a.train)?;
    let start = Instant::now();
    let loaded = load_input(&a.input)?;
    let mut timings = BTreeMap::from([("load".to_string(), ms(start))]);
    let id = id_for("embed", &loaded.info, &cfg, "")?;
    let mut out = OutputDir::create(&a.out)?;
    let t = Instant::now();
    let (res, diverged) = train(&loaded.graph, &cfg)?;
    timings.insert("train".into(), ms(t));
    write_fit(&mut out, &loaded.graph, &res, &id)?;
    timings.insert("total".into(), ms(start));
    let status = if diverged.is_some() { "diverged" } else { "ok" };
    finish(out, id, "embed", &loaded, &cfg, status, timings)?;
    match diverged {
        Some(d) => Err(d.into()),
        None => Ok(()),
    }
}

#[derive(Serialize)]
struct Metrics {
    run_id: String,
    auc_roc: Option<f64>,
    auc_pr: Option<f64>,
    micro_f1: Option<f64>,
    macro_f1: Option<f64>,
    per_trial: Vec<hbdm::eval::TrialScore>,
    split_meta: Option<SplitMeta>,
    #[serde(skip_serializing_if = "Option::is_none")]
    classify: Option<ClassifyMeta>,
}

#[derive(Serialize)]
struct ClassifyMeta {
    k: usize,
    trials: usize,
    train_frac: f64,
    multi_label: bool,
    classes: usize,
    unused_label_entries: usize,
}

/// Either loads embeddings from `dir` or trains on `g`, writing the fit.
fn obtain_state(
    g: &Graph,
    cfg: &TrainConfig,
    dir: Option<&PathBuf>,
    out: &mut OutputDir,
    id: &str,
    timings: &mut BTreeMap<String, f64>,
) -> Result<(EmbeddingState, Option<DivergedError>)> {
    if let Some(dir) = dir {
        return Ok((load_embeddings(dir, g)?, None));
    }
    let t = Instant::now();
    let (res, diverged) = train(g, cfg)?;
    timings.insert("train".into(), ms(t));
    write_fit(out, g, &res, id)?;
    Ok((res.state, diverged))
}

pub fn link_prediction(a: &LinkArgs) -> Result<()> {
    let cfg = resolve_config(&a.train)?;
    if !(a.hide_fraction > 0.0 && a.hide_fraction < 1.0) {
        return Err(UsageError(format!(
            "--hide-fraction must lie in (0, 1), got {}",
            a.hide_fraction
        ))
        .into());
    }
    let start = Instant::now();
    let loaded = load_input(&a.input)?;
    let mut timings = BTreeMap::from([("load".to_string(), ms(start))]);
    let extra = format!("hide={};forest={}", a.hide_fraction, a.spanning_forest);
    let id = id_for("eval link-prediction", &loaded.info, &cfg, &extra)?;
    let mut out = OutputDir::create(&a.out)?;

    let t = Instant::now();
    let split = make_split_with(&loaded.graph, a.hide_fraction, cfg.seed, SplitOptions { spanning_forest: a.spanning_forest })
        .map_err(|e| match e {
            hbdm::HbdmError::Disconnected { components } => anyhow!(
                "the graph has {components} connected components; rerun with --giant-component or --spanning-forest"
            ),
            e => e.into(),
        })?;
    timings.insert("split".into(), ms(t));
    if split.test_edges.is_empty() {
        return Err(anyhow!(
            "no edge can be hidden without disconnecting the graph"
        ));
    }
    let (state, diverged) = obtain_state(
        &split.train_graph,
        &cfg,
        a.embeddings.as_ref(),
        &mut out,
        &id,
        &mut timings,
    )?;
    let m = evaluate_link_prediction(&state, &split)?;
    log::info!("AUC-ROC {:.4}, AUC-PR {:.4}", m.auc_roc, m.auc_pr);
    let metrics = Metrics {
        run_id: id.clone(),
        auc_roc: Some(m.auc_roc),
        auc_pr: Some(m.auc_pr),
        micro_f1: None,
        macro_f1: None,
        per_trial: Vec::new(),
        split_meta: Some(m.split_meta),
        classify: None,
    };
    out.write("metrics.json", serde_json::to_string_pretty(&metrics)?)?;
    timings.insert("total".into(), ms(start));
    let status = if diverged.is_some() { "diverged" } else { "ok" };
    finish(
        out,
        id,
        "eval link-prediction",
        &loaded,
        &cfg,
        status,
        timings,
    )?;
    match diverged {
        Some(d) => Err(d.into()),
        None => Ok(()),
    }
}

pub fn classify(a: &ClassifyArgs) -> Result<()> {
    let cfg = resolve_config(&a.train)?;
    let start = Instant::now();
    let loaded = load_input(&a.input)?;
    let entries = read_label_file(&a.labels)?;
    let mut timings = BTreeMap::from([("load".to_string(), ms(start))]);
    let labels_hash = sha256_hex(&fs::read(&a.labels)?);
    let extra = format!(
        "labels={labels_hash};k={};trials={};frac={}",
        a.k, a.trials, a.train_frac
    );
    let id = id_for("eval classify", &loaded.info, &cfg, &extra)?;
    let mut out = OutputDir::create(&a.out)?;

    let (state, diverged) = obtain_state(
        &loaded.graph,
        &cfg,
        a.embeddings.as_ref(),
        &mut out,
        &id,
        &mut timings,
    )?;
    let (nodes, points, dim) = node_features(&loaded.graph, &state)?;
    let aligned = align_labels(&nodes, &entries).map_err(|e| match e {
        hbdm::HbdmError::MissingLabels(m) => anyhow!(
            "{} node(s) have no label: {}{}",
            m.len(),
            m.iter().take(20).cloned().collect::<Vec<_>>().join(", "),
            if m.len() > 20 { ", ..." } else { "" }
        ),
        e => e.into(),
    })?;
    let t = Instant::now();
    let r: KnnReport = knn_classify(
        &points,
        dim,
        &aligned.classes,
        a.train_frac,
        a.k,
        a.trials,
        cfg.seed,
    )
    .map_err(|e| UsageError(e.to_string()))?;
    timings.insert("classify".into(), ms(t));
    log::info!("micro-F1 {:.4}, macro-F1 {:.4}", r.micro_f1, r.macro_f1);
    let metrics = Metrics {
        run_id: id.clone(),
        auc_roc: None,
        auc_pr: None,
        micro_f1: Some(r.micro_f1),
        macro_f1: Some(r.macro_f1),
        per_trial: r.per_trial,
        split_meta: None,
        classify: Some(ClassifyMeta {
            k: a.k,
            trials: a.trials,
            train_frac: a.train_frac,
            multi_label: r.multi_label,
            classes: aligned.names.len(),
            unused_label_entries: aligned.unused,
        }),
    };
    out.write("metrics.json", serde_json::to_string_pretty(&metrics)?)?;
    timings.insert("total".into(), ms(start));
    let status = if diverged.is_some() { "diverged" } else { "ok" };
    finish(out, id, "eval classify", &loaded, &cfg, status, timings)?;
    match diverged {
        Some(d) => Err(d.into()),
        None => Ok(()),
    }
}

fn required(dir: &Path, name: &str) -> Result<PathBuf> {
    let p = dir.join(name);
    if !p.exists() {
        return Err(anyhow!("run directory is missing {}", p.display()));
    }
    Ok(p)
}

fn row_labels(g: &Graph) -> Vec<String> {
    match g.mode() {
        GraphMode::Undirected => g.labels(1).to_vec(),
        GraphMode::Directed => g
            .labels(1)
            .iter()
            .map(|l| format!("{l}.out"))
            .chain(g.labels(1).iter().map(|l| format!("{l}.in")))
            .collect(),
        GraphMode::Bipartite => g.labels(1).iter().chain(g.labels(2)).cloned().collect(),
    }
}

pub fn viz(a: &VizArgs) -> Result<()> {
    let start = Instant::now();
    let manifest_path = required(&a.run, "manifest.json")?;
    let mut manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&manifest_path)?)
            .with_context(|| format!("parsing {}", manifest_path.display()))?;
    let field = |k: &str| manifest["input"][k].clone();
    let input = InputArgs {
        input: PathBuf::from(
            field("path")
                .as_str()
                .ok_or_else(|| anyhow!("manifest lacks input.path"))?,
        ),
        mode: field("mode").as_str().unwrap_or("undirected").parse()?,
        giant_component: field("giant_component").as_bool().unwrap_or(false),
    };
    let id = manifest["run_id"]
        .as_str()
        .ok_or_else(|| anyhow!("manifest lacks run_id"))?
        .to_string();
    let loaded = load_input(&input)?;
    if Some(loaded.info.sha256.as_str()) != field("sha256").as_str() {
        log::warn!("{} changed since the run was made", input.input.display());
    }
    let g = &loaded.graph;
    let state = load_embeddings(&a.run, g)?;
    let tree = read_tree_json(required(&a.run, "tree.json")?, &state)?;
    let levels = a
        .levels
        .clone()
        .unwrap_or_else(|| (1..=tree.height().min(3)).collect());
    if let Some(&bad) = levels.iter().find(|&&l| l > tree.height()) {
        return Err(UsageError(format!(
            "level {bad} exceeds the tree height {}",
            tree.height()
        ))
        .into());
    }

    let mut out = OutputDir::create(&a.run)?;
    let labels = row_labels(g);
    let mut dendro = Dendrogram::build(&tree, state.z(), Some(&labels))?;
    dendro.run_id = Some(id.clone());
    out.write("figures/dendrogram.json", serde_json::to_string(&dendro)?)?;
    out.write("figures/dendrogram.nwk", dendro.to_newick() + "\n")?;
    out.write("figures/dendrogram.svg", dendro.to_svg())?;

    let order = order_nodes(&tree, state.z())?;
    for &l in &levels {
        let img = adjacency_image(g, &tree, &order, l, Some(&id))?;
        out.write(&format!("figures/adjacency_L{l}.svg"), &img.svg)?;
        out.write(&format!("figures/adjacency_L{l}.csv"), img.to_csv()?)?;
        out.write(
            &format!("figures/adjacency_L{l}_blocks.json"),
            serde_json::to_string_pretty(
                &serde_json::json!({ "run_id": id, "level": l, "blocks": img.boundaries }),
            )?,
        )?;
    }

    let groups = match &a.labels {
        Some(p) if g.mode() == GraphMode::Undirected => {
            let aligned = align_labels(g.labels(1), &read_label_file(p)?)?;
            aligned.classes.iter().map(|c| c[0]).collect()
        }
        Some(_) => {
            log::warn!("label colouring is only supported for undirected graphs; using clusters");
            top_level_groups(&tree)
        }
        None => top_level_groups(&tree),
    };
    out.write(
        "figures/scatter.csv",
        scatter_csv(&state, Some(&labels), Some(&groups))?,
    )?;
    match scatter_svg(&state, Some(&groups), Some(&id)) {
        Ok(svg) => out.write("figures/scatter.svg", svg)?,
        Err(e) => log::warn!("{e}"),
    }

    let outputs = manifest["outputs"]
        .as_array_mut()
        .ok_or_else(|| anyhow!("manifest lacks outputs"))?;
    for e in &out.entries {
        outputs.retain(|o| o["path"].as_str() != Some(e.path.as_str()));
        outputs.push(serde_json::to_value(e)?);
    }
    manifest["timings_ms"]["viz"] = serde_json::json!(ms(start));
    fs::write(&manifest_path, serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}
