//! Hierarchical block distance model (HBDM) for graph embeddings.
//!
//! Embeds unipartite, directed and bipartite graphs in a low-dimensional
//! Euclidean space under a Poisson latent distance likelihood. The O(N^2)
//! non-link term is approximated through a divisive cluster hierarchy, giving
//! near `N log N` cost per iteration.

pub mod error;
pub mod eval;
pub mod graph;
pub mod hierarchy;
pub mod io;
pub mod model;
pub mod numeric;
pub mod objective;
pub mod train;
pub mod viz;

pub use error::{HbdmError, Result};
pub use eval::{
    auc_pr, auc_roc, knn_classify, make_split, make_split_with, score_pairs, EvalSplit, KnnReport,
    LinkPredictionMetrics, SplitMeta, SplitOptions,
};
pub use graph::{
    load_edge_list, load_edge_list_with, Graph, GraphMode, GraphStats, LoadOptions, LoadReport,
};
pub use hierarchy::{
    aux_identity_check, build_tree, euclidean_kmeans, ClusterTree, KmeansState, LeafRule,
    TreeConfig,
};
pub use io::{
    align_labels, embedding_tables, node_features, read_label_file, state_from_tables,
    EmbeddingTable,
};
pub use model::{
    canonicalize, full_ldm_gradient, full_ldm_nll, full_ldm_report, poisson_rate, EmbeddingState,
    Gradient, Layout, ObjectiveReport,
};
pub use objective::{
    hbdm_gradient, hbdm_nll, rotation_sensitivity, BlockPairCache, CentroidMode, HbdmObjective,
};
pub use train::{fit, fit_from, init_state, Adam, FitResult, IterRecord, TrainConfig, TrainError};
pub use viz::{
    adjacency_image, log2_sed, order_nodes, scatter_csv, scatter_svg, AdjacencyImage, Dendrogram,
};
