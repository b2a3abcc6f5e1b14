use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::pack::{kl, kl_weighted};
use super::BatchError;
use crate::hetgraph::{connected_components, HetGraph, NodeId};

/// A way to partition nodes into disjoint groups.
pub trait ClusterStrategy {
    /// One label per node; labels need not be contiguous.
    fn assign(&self, g: &HetGraph, seed: u64) -> Vec<usize>;
}

/// Asynchronous label propagation in seeded random order. A node may only
/// join a label whose cluster has fewer than `max_size` members.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabelPropagation {
    pub max_size: usize,
    pub max_iters: usize,
}

impl Default for LabelPropagation {
    fn default() -> Self {
        Self {
            max_size: 64,
            max_iters: 20,
        }
    }
}

impl ClusterStrategy for LabelPropagation {
    fn assign(&self, g: &HetGraph, seed: u64) -> Vec<usize> {
        let n = g.n_nodes();
        let mut labels: Vec<usize> = (0..n).collect();
        let mut sizes = vec![1usize; n];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..n).collect();
        let mut seen = Vec::new();
        let mut tied = Vec::new();
        for _ in 0..self.max_iters {
            order.shuffle(&mut rng);
            let mut changed = false;
            for &v in &order {
                seen.clear();
                seen.extend(g.incidences(v).iter().map(|i| labels[i.nbr]));
                if seen.is_empty() {
                    continue;
                }
                seen.sort_unstable();
                let cur = labels[v];
                let mut best = 0;
                tied.clear();
                for run in seen.chunk_by(|a, b| a == b) {
                    let l = run[0];
                    if l != cur && sizes[l] >= self.max_size {
                        continue;
                    }
                    if run.len() > best {
                        best = run.len();
                        tied.clear();
                    }
                    if run.len() == best {
                        tied.push(l);
                    }
                }
                if tied.is_empty() || tied.contains(&cur) {
                    continue;
                }
                let next = tied[rng.random_range(0..tied.len())];
                sizes[cur] -= 1;
                sizes[next] += 1;
                labels[v] = next;
                changed = true;
            }
            if !changed {
                break;
            }
        }
        labels
    }
}

/// Connected components as clusters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ComponentClustering;

impl ClusterStrategy for ComponentClustering {
    fn assign(&self, g: &HetGraph, _seed: u64) -> Vec<usize> {
        connected_components(g)
    }
}

/// Node partition with clusters numbered by their smallest member.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Clustering {
    pub labels: Vec<usize>,
    pub members: Vec<Vec<NodeId>>,
}

impl Clustering {
    pub fn from_labels(raw: &[usize]) -> Self {
        let mut map = std::collections::HashMap::new();
        let mut members: Vec<Vec<NodeId>> = Vec::new();
        let labels = raw
            .iter()
            .enumerate()
            .map(|(v, l)| {
                let k = *map.entry(*l).or_insert_with(|| {
                    members.push(Vec::new());
                    members.len() - 1
                });
                members[k].push(v);
                k
            })
            .collect();
        Self { labels, members }
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

pub fn cluster_graph(g: &HetGraph, strategy: &dyn ClusterStrategy, seed: u64) -> Result<Clustering, BatchError> {
    if g.n_nodes() == 0 {
        return Err(BatchError::EmptyGraph);
    }
    let raw = strategy.assign(g, seed);
    if raw.len() != g.n_nodes() {
        return Err(BatchError::LengthMismatch {
            left: raw.len(),
            right: g.n_nodes(),
        });
    }
    Ok(Clustering::from_labels(&raw))
}

/// `size(C) = sum_v (1 + d_type(v) * per_feature) + per_edge * |E(C)|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostModel {
    pub per_feature: f64,
    pub per_edge: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        Self {
            per_feature: 1.0,
            per_edge: 1.0,
        }
    }
}

/// Weights of the node-type and edge-type KL terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KlWeights {
    pub node_type: f64,
    pub edge_type: f64,
}

impl Default for KlWeights {
    fn default() -> Self {
        Self {
            node_type: 0.0,
            edge_type: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub id: usize,
    pub members: Vec<NodeId>,
    pub cost: f64,
    pub node_counts: Vec<usize>,
    /// Edge types of edges with both endpoints inside.
    pub edge_counts: Vec<usize>,
    pub kappa: f64,
}

pub(crate) fn normalize(counts: &[usize]) -> Option<Vec<f64>> {
    let total: usize = counts.iter().sum();
    (total > 0).then(|| counts.iter().map(|&c| c as f64 / total as f64).collect())
}

/// Node-type and induced edge-type counts of `nodes`, or of the whole graph.
pub fn global_counts(g: &HetGraph, population: Option<&[NodeId]>) -> (Vec<usize>, Vec<usize>) {
    match population {
        None => (g.node_type_counts(), g.edge_type_counts().to_vec()),
        Some(nodes) => {
            let mut inside = vec![false; g.n_nodes()];
            for &v in nodes {
                inside[v] = true;
            }
            counts_within(g, nodes, |u| inside[u])
        }
    }
}

fn counts_within(g: &HetGraph, nodes: &[NodeId], inside: impl Fn(NodeId) -> bool) -> (Vec<usize>, Vec<usize>) {
    let mut nc = vec![0; g.registry().n_node_types()];
    let mut ec = vec![0; g.n_edge_types()];
    for &v in nodes {
        nc[g.node_type(v).index()] += 1;
        for inc in g.incidences(v) {
            if inc.out && inside(inc.nbr) {
                ec[g.edge(inc.edge).etype.index()] += 1;
            }
        }
    }
    (nc, ec)
}

/// KL of one attribute. A cluster without any item of this attribute (for
/// example a single node, which has no edges) is scored as the least
/// representative point mass, `-ln min_t p_G(t)`.
fn attribute_kl(counts: &[usize], global: &Option<Vec<f64>>) -> Result<f64, BatchError> {
    let Some(pg) = global else { return Ok(0.0) };
    match normalize(counts) {
        Some(pk) => kl(&pk, pg),
        None => {
            let min = pg.iter().copied().filter(|&p| p > 0.0).fold(1.0, f64::min);
            Ok(-min.ln())
        }
    }
}

/// Computes cost, counts and `κ` of every cluster in parallel.
pub fn cluster_stats(
    g: &HetGraph,
    clustering: &Clustering,
    cost: &CostModel,
    weights: &KlWeights,
    population: Option<&[NodeId]>,
) -> Result<Vec<Cluster>, BatchError> {
    let w = [weights.node_type, weights.edge_type];
    kl_weighted(&[0.0, 0.0], &w)?;
    let (gn, ge) = global_counts(g, population);
    let (pn, pe) = (normalize(&gn), normalize(&ge));
    let labels = &clustering.labels;
    clustering
        .members
        .par_iter()
        .enumerate()
        .map(|(id, members)| {
            let (nc, ec) = counts_within(g, members, |u| labels[u] == id);
            let edges: usize = ec.iter().sum();
            let nodes: f64 = members
                .iter()
                .map(|&v| 1.0 + g.registry().dim(g.node_type(v)) as f64 * cost.per_feature)
                .sum();
            let kn = if w[0] > 0.0 { attribute_kl(&nc, &pn)? } else { 0.0 };
            let ke = if w[1] > 0.0 { attribute_kl(&ec, &pe)? } else { 0.0 };
            Ok(Cluster {
                id,
                members: members.clone(),
                cost: nodes + cost.per_edge * edges as f64,
                node_counts: nc,
                edge_counts: ec,
                kappa: kl_weighted(&[kn, ke], &w)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hetgraph::{EdgeTypeId, GraphBuilder, NodeTypeId, TypeRegistry};

    fn reg() -> TypeRegistry {
        let mut r = TypeRegistry::new();
        r.add_node_type("a", 2).unwrap();
        r.add_edge_type("x").unwrap();
        r.add_edge_type("y").unwrap();
        r
    }

    #[test]
    fn isolated_nodes_stay_alone() {
        let mut b = GraphBuilder::new(reg());
        for _ in 0..5 {
            b.add_anon_node(NodeTypeId(0), &[0.0, 0.0]).unwrap();
        }
        let g = b.build();
        let c = cluster_graph(&g, &LabelPropagation::default(), 3).unwrap();
        assert_eq!(c.len(), 5);
        let stats = cluster_stats(&g, &c, &CostModel::default(), &KlWeights::default(), None).unwrap();
        // 1 + 2 features, no edges; the edge-type reference is empty.
        assert!(stats.iter().all(|s| s.cost == 3.0 && s.kappa == 0.0));
    }

    #[test]
    fn cost_counts_induced_edges() {
        let mut b = GraphBuilder::new(reg());
        let v: Vec<_> = (0..3).map(|_| b.add_anon_node(NodeTypeId(0), &[0.0, 0.0]).unwrap()).collect();
        b.add_edge(v[0], v[1], EdgeTypeId(0)).unwrap();
        b.add_edge(v[1], v[2], EdgeTypeId(1)).unwrap();
        let g = b.build();
        let c = Clustering::from_labels(&[0, 0, 1]);
        let s = cluster_stats(&g, &c, &CostModel::default(), &KlWeights::default(), None).unwrap();
        assert_eq!(s[0].cost, 2.0 * 3.0 + 1.0);
        assert_eq!(s[0].edge_counts, vec![1, 0]);
        assert!((s[0].kappa - 2f64.ln()).abs() < 1e-15);
        // Node 2 has no internal edge: worst point mass.
        assert!((s[1].kappa - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn label_propagation_respects_cap() {
        let mut b = GraphBuilder::new(reg());
        let v: Vec<_> = (0..12).map(|_| b.add_anon_node(NodeTypeId(0), &[0.0, 0.0]).unwrap()).collect();
        for i in 0..12 {
            for j in i + 1..12 {
                b.add_edge(v[i], v[j], EdgeTypeId(0)).unwrap();
            }
        }
        let g = b.build();
        let lp = LabelPropagation { max_size: 5, max_iters: 50 };
        let c = cluster_graph(&g, &lp, 1).unwrap();
        assert!(c.members.iter().all(|m| m.len() <= 5));
    }
}
