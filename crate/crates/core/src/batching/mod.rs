//! Storage-level KL-Batching and minibatch-level round-robin scheduling.

mod cluster;
mod pack;
mod round_robin;

pub use cluster::{
    cluster_graph, cluster_stats, global_counts, ClusterStrategy, Clustering, Cluster, ComponentClustering,
    CostModel, KlWeights, LabelPropagation,
};
pub use pack::{
    kl, kl_batch, kl_weighted, leading_batches, random_pack, BatchManifest, ClusterSummary, PackVariant, StorageBatch,
};
pub use round_robin::{intra_batch_edges, round_robin, MiniBatch, RoundRobin, RoundRobinConfig};

use crate::hetgraph::GraphError;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BatchError {
    #[error("support violation: p_k({index}) > 0 but p_G({index}) = 0")]
    Support { index: usize },
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("weights must be nonnegative and sum to 1")]
    Weights,
    #[error("cluster {cluster} has cost {cost} above budget {budget}")]
    Unpackable { cluster: usize, cost: f64, budget: f64 },
    #[error("graph has no nodes")]
    EmptyGraph,
    #[error("invalid batching config: {0}")]
    Config(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
}
