//! Full-batch Adam on the hierarchical (or exact) negative log-likelihood.
//!
//! The cluster tree is rebuilt from scratch out of the current embedding every
//! `rebuild_every` iterations and held fixed in between.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{HbdmError, Result};
use crate::graph::Graph;
use crate::hierarchy::{build_tree, ClusterTree, TreeConfig, DEFAULT_MAX_ITERS};
use crate::model::{
    canonicalize, full_ldm_gradient_with_cap, full_ldm_report, EmbeddingState, DEFAULT_EXACT_CAP,
};
use crate::numeric::mix_seed;
use crate::objective::{CentroidMode, HbdmObjective};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub dim: usize,
    pub lr: f64,
    pub iters: usize,
    pub rebuild_every: usize,
    /// Per-node effects (HBDM-Re); `false` ties them to one global bias.
    pub random_effects: bool,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub init_scale: f64,
    /// Optimise the exact O(N^2) likelihood instead of the hierarchy.
    pub exact: bool,
    pub exact_cap: usize,
    pub centroid_mode: CentroidMode,
    pub kmeans_iters: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            dim: 2,
            lr: 0.05,
            iters: 3000,
            rebuild_every: 25,
            random_effects: true,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            init_scale: 0.1,
            exact: false,
            exact_cap: DEFAULT_EXACT_CAP,
            centroid_mode: CentroidMode::FrozenWeights,
            kmeans_iters: DEFAULT_MAX_ITERS,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(HbdmError::InvalidArgument(m.to_string()));
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad("lr must be a finite positive number");
        }
        if self.rebuild_every == 0 {
            return bad("rebuild_every must be at least 1");
        }
        if self.dim == 0 {
            return bad("dim must be at least 1");
        }
        if !(self.init_scale.is_finite() && self.init_scale >= 0.0) {
            return bad("init_scale must be a finite non-negative number");
        }
        if !(0.0..1.0).contains(&self.beta1)
            || !(0.0..1.0).contains(&self.beta2)
            || !(self.eps.is_finite() && self.eps > 0.0)
        {
            return bad("Adam parameters must satisfy 0 <= beta < 1 and eps > 0");
        }
        Ok(())
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterRecord {
    pub iter: usize,
    pub nll: f64,
    pub link_term: f64,
    pub leaf_term: f64,
    pub block_terms: Vec<f64>,
    pub wall_ms: f64,
    pub rebuilt: bool,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    /// Canonicalised final embedding.
    pub state: EmbeddingState,
    /// Last tree, with centroids refreshed for `state`.
    pub tree: ClusterTree,
    pub log: Vec<IterRecord>,
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] HbdmError),
    #[error("training diverged at iteration {iter}: {reason}")]
    Diverged {
        iter: usize,
        reason: String,
        last: Box<FitResult>,
    },
}

/// Gaussian coordinates with standard deviation `init_scale`, zero effects.
pub fn init_state(g: &Graph, cfg: &TrainConfig) -> Result<EmbeddingState> {
    cfg.validate()?;
    let layout = g.layout();
    let mut state = EmbeddingState::zeros(layout, cfg.dim, !cfg.random_effects);
    let normal = Normal::new(0.0, cfg.init_scale)
        .map_err(|e| HbdmError::InvalidArgument(format!("init_scale: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 0x1417));
    for v in state.z_mut() {
        *v = normal.sample(&mut rng);
    }
    Ok(state)
}

#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grad)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
    }
}

fn tree_for(state: &EmbeddingState, cfg: &TrainConfig, iter: usize) -> Result<ClusterTree> {
    let tc = TreeConfig {
        seed: mix_seed(cfg.seed, iter as u64 + 1),
        max_iters: cfg.kmeans_iters,
        ..TreeConfig::default()
    };
    build_tree(state.z(), state.dim(), state.layout(), &tc)
}

fn finish(
    state: EmbeddingState,
    tree: Option<ClusterTree>,
    cfg: &TrainConfig,
    log: Vec<IterRecord>,
) -> Result<FitResult> {
    let state = canonicalize(&state);
    let tree = match tree {
        Some(mut t) => {
            t.refresh_centroids(state.z());
            t
        }
        None => tree_for(&state, cfg, usize::MAX - 1)?,
    };
    Ok(FitResult { state, tree, log })
}

/// Trains an embedding for `g`.
pub fn fit(g: &Graph, cfg: &TrainConfig) -> std::result::Result<FitResult, TrainError> {
    let state = init_state(g, cfg)?;
    fit_from(g, cfg, state)
}

/// Trains from a given starting state.
pub fn fit_from(
    g: &Graph,
    cfg: &TrainConfig,
    mut state: EmbeddingState,
) -> std::result::Result<FitResult, TrainError> {
    cfg.validate()?;
    if state.layout() != g.layout() || state.dim() != cfg.dim {
        return Err(HbdmError::Mismatch("initial state does not match graph/config".into()).into());
    }
    if cfg.exact && g.num_nodes() > cfg.exact_cap {
        return Err(HbdmError::ExactCapExceeded {
            n: g.num_nodes(),
            cap: cfg.exact_cap,
        }
        .into());
    }
    let mut adam = Adam::new(state.num_params(), cfg.lr, cfg.beta1, cfg.beta2, cfg.eps);
    let mut log = Vec::with_capacity(cfg.iters);
    let mut last_tree: Option<ClusterTree> = None;
    let mut clamp_warned = false;

    let diverged = |iter: usize,
                    reason: String,
                    state: EmbeddingState,
                    tree: Option<ClusterTree>,
                    log: Vec<IterRecord>| {
        match finish(state, tree, cfg, log) {
            Ok(last) => TrainError::Diverged {
                iter,
                reason,
                last: Box::new(last),
            },
            Err(e) => TrainError::Model(e),
        }
    };

    let mut t = 0;
    while t < cfg.iters {
        let end = if cfg.exact {
            cfg.iters
        } else {
            (t + cfg.rebuild_every).min(cfg.iters)
        };
        let start = Instant::now();
        let tree = if cfg.exact {
            None
        } else {
            Some(tree_for(&state, cfg, t)?)
        };
        let objective = match &tree {
            Some(tr) => Some(HbdmObjective::new(g, tr)?.with_centroid_mode(cfg.centroid_mode)),
            None => None,
        };
        let mut build_ms = start.elapsed().as_secs_f64() * 1e3;
        for it in t..end {
            let tick = Instant::now();
            let (report, grad) = match &objective {
                Some(obj) => obj.nll_and_gradient(&state)?,
                None => (
                    full_ldm_report(g, &state, cfg.exact_cap)?,
                    full_ldm_gradient_with_cap(g, &state, cfg.exact_cap)?,
                ),
            };
            let flat = grad.flatten();
            if !report.total_nll.is_finite() || flat.iter().any(|v| !v.is_finite()) {
                drop(objective);
                return Err(diverged(
                    it,
                    "non-finite objective or gradient".into(),
                    state,
                    tree.or(last_tree),
                    log,
                ));
            }
            if report.clamped > 0 && !clamp_warned {
                log::warn!(
                    "iteration {it}: {} exponent(s) clamped by the overflow guard",
                    report.clamped
                );
                clamp_warned = true;
            }
            let mut params = state.params();
            adam.step(&mut params, &flat);
            if params.iter().any(|v| !v.is_finite()) {
                drop(objective);
                return Err(diverged(
                    it,
                    "non-finite parameters after update".into(),
                    state,
                    tree.or(last_tree),
                    log,
                ));
            }
            state.set_params(&params);
            log.push(IterRecord {
                iter: it,
                nll: report.total_nll,
                link_term: report.link_term,
                leaf_term: report.leaf_analytic_term,
                block_terms: report.block_terms_per_level,
                wall_ms: tick.elapsed().as_secs_f64() * 1e3 + build_ms,
                rebuilt: it == t && !cfg.exact,
            });
            build_ms = 0.0;
        }
        drop(objective);
        if tree.is_some() {
            last_tree = tree;
        }
        t = end;
    }
    Ok(finish(state, last_tree, cfg, log)?)
}
