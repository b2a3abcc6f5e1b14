use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{PretrainError, TrainConfig};
use crate::batching::{
    cluster_graph, cluster_stats, intra_batch_edges, kl_batch, Cluster, Clustering, CostModel, LabelPropagation,
};
use crate::hetgraph::{connected_components, EdgeId, HetGraph, NodeId};

/// Training and holdout nodes; the holdout is a union of whole components.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeSplit {
    pub train: Vec<NodeId>,
    pub holdout: Vec<NodeId>,
}

/// Moves shuffled connected components to the holdout until it holds at
/// least `holdout_frac` of all edges.
pub fn component_split(g: &HetGraph, holdout_frac: f64, seed: u64) -> Result<NodeSplit, PretrainError> {
    if !(holdout_frac > 0.0 && holdout_frac < 1.0) {
        return Err(PretrainError::Config("holdout_frac must lie in (0, 1)".into()));
    }
    let comp = connected_components(g);
    let nc = comp.iter().copied().max().map_or(0, |m| m + 1);
    let mut edges = vec![0usize; nc];
    for e in g.edges() {
        edges[comp[e.src]] += 1;
    }
    let mut order: Vec<usize> = (0..nc).filter(|&c| edges[c] > 0).collect();
    if order.len() < 2 {
        return Err(PretrainError::HoldoutOverlap(
            "graph needs at least two components with edges".into(),
        ));
    }
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let want = holdout_frac * g.n_edges() as f64;
    let mut held = vec![false; nc];
    let mut acc = 0usize;
    for &c in &order[..order.len() - 1] {
        if acc as f64 >= want {
            break;
        }
        held[c] = true;
        acc += edges[c];
    }
    let (holdout, train) = (0..g.n_nodes()).partition(|&v| held[comp[v]]);
    Ok(NodeSplit { train, holdout })
}

impl NodeSplit {
    /// Refuses splits where a component or a node lies on both sides.
    pub fn validate(&self, g: &HetGraph) -> Result<(), PretrainError> {
        let mut side = vec![0u8; g.n_nodes()];
        for (bit, nodes) in [(1u8, &self.train), (2u8, &self.holdout)] {
            for &v in nodes {
                g.check_node(v)?;
                side[v] |= bit;
            }
        }
        if let Some(v) = side.iter().position(|&s| s == 3) {
            return Err(PretrainError::HoldoutOverlap(format!("node {v} is in both splits")));
        }
        let comp = connected_components(g);
        let nc = comp.iter().copied().max().map_or(0, |m| m + 1);
        let mut seen = vec![0u8; nc];
        for v in 0..g.n_nodes() {
            seen[comp[v]] |= side[v];
        }
        if let Some(c) = seen.iter().position(|&s| s == 3) {
            return Err(PretrainError::HoldoutOverlap(format!(
                "component {c} has both training and holdout nodes"
            )));
        }
        Ok(())
    }
}

/// One storage batch and the supervision edges drawn from it.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedBatch {
    pub members: Vec<NodeId>,
    pub supervision: Vec<EdgeId>,
    pub mean_kappa: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingData {
    pub clusters: Vec<Cluster>,
    /// Storage batches in loading order.
    pub batches: Vec<LoadedBatch>,
    /// Supervised edge count, equal to the requested `D`.
    pub size: usize,
}

/// Clusters the training nodes, packs them with KL-Batching and loads
/// storage batches in order until `D` supervision edges are gathered. The
/// last batch contributes a seeded subset of its edges.
pub fn load_training_data(g: &HetGraph, train: &[NodeId], cfg: &TrainConfig) -> Result<TrainingData, PretrainError> {
    let lp = LabelPropagation {
        max_size: cfg.cluster_max,
        ..LabelPropagation::default()
    };
    let all = cluster_graph(g, &lp, cfg.seed)?;
    let mut in_train = vec![false; g.n_nodes()];
    for &v in train {
        in_train[v] = true;
    }
    let mut labels = vec![usize::MAX; g.n_nodes()];
    let mut members = Vec::new();
    for m in all.members.into_iter().filter(|m| m.iter().all(|&v| in_train[v])) {
        for &v in &m {
            labels[v] = members.len();
        }
        members.push(m);
    }
    let clustering = Clustering { labels, members };
    let clusters = cluster_stats(g, &clustering, &CostModel::default(), &cfg.kl_weights, Some(train))?;
    let packed = kl_batch(&clusters, cfg.storage_budget, cfg.pack)?;

    let mut batches = Vec::new();
    let mut size = 0;
    for (i, b) in packed.iter().enumerate() {
        if size == cfg.data_size {
            break;
        }
        let nodes = b.nodes(&clusters);
        let mut sup = intra_batch_edges(g, &nodes);
        if sup.is_empty() {
            continue;
        }
        let room = cfg.data_size - size;
        if sup.len() > room {
            sup.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed ^ i as u64));
            sup.truncate(room);
            sup.sort_unstable();
        }
        size += sup.len();
        batches.push(LoadedBatch {
            members: nodes,
            supervision: sup,
            mean_kappa: b.mean_kappa,
        });
    }
    if size < cfg.data_size {
        return Err(PretrainError::InsufficientData {
            requested: cfg.data_size,
            available: size,
        });
    }
    Ok(TrainingData { clusters, batches, size })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::syngen::{generate, SynConfig};

    fn graph() -> HetGraph {
        generate(&SynConfig {
            n_nodes: 400,
            components: 8,
            seed: 5,
            ..SynConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn split_keeps_components_whole() {
        let g = graph();
        let s = component_split(&g, 0.2, 1).unwrap();
        s.validate(&g).unwrap();
        assert!(!s.holdout.is_empty() && !s.train.is_empty());
        assert_eq!(s.train.len() + s.holdout.len(), g.n_nodes());
    }

    #[test]
    fn straddling_split_is_refused() {
        let g = graph();
        let mut s = component_split(&g, 0.2, 1).unwrap();
        let v = s.holdout.pop().unwrap();
        s.train.push(v);
        assert!(matches!(s.validate(&g), Err(PretrainError::HoldoutOverlap(_))));
    }

    #[test]
    fn loads_exactly_d_edges() {
        let g = graph();
        let s = component_split(&g, 0.2, 1).unwrap();
        let cfg = TrainConfig {
            data_size: 300,
            storage_budget: 2000.0,
            ..TrainConfig::default()
        };
        let d = load_training_data(&g, &s.train, &cfg).unwrap();
        assert_eq!(d.size, 300);
        assert_eq!(d.batches.iter().map(|b| b.supervision.len()).sum::<usize>(), 300);
        let too_many = TrainConfig {
            data_size: 1_000_000,
            ..cfg
        };
        assert!(matches!(
            load_training_data(&g, &s.train, &too_many),
            Err(PretrainError::InsufficientData { .. })
        ));
    }
}
