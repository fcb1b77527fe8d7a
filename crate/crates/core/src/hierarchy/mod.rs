//! Euclidean-norm k-means and the divisive cluster tree.

pub mod kmeans;
pub mod tree;

pub use kmeans::{aux_identity_check, euclidean_kmeans, KmeansState, DEFAULT_MAX_ITERS, EPS_PHI};
pub use tree::{build_tree, ClusterTree, LeafRule, NodeExport, TreeConfig, TreeExport, TreeNode};
