use std::collections::VecDeque;

use log::warn;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::BatchError;
use crate::hetgraph::{EdgeId, EdgeTypeId, HetGraph, MessageView, NodeId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RoundRobinConfig {
    pub mb_size: usize,
    pub neg_per_pos: usize,
    /// Cyclic type order; `None` means ascending type id.
    pub cycle: Option<Vec<EdgeTypeId>>,
    pub seed: u64,
}

impl Default for RoundRobinConfig {
    fn default() -> Self {
        Self {
            mb_size: 1024,
            neg_per_pos: 1,
            cycle: None,
            seed: 0,
        }
    }
}

/// Supervision edges of one type plus corrupted negatives, all drawn from
/// one storage batch.
#[derive(Debug, Clone, PartialEq)]
pub struct MiniBatch {
    pub etype: EdgeTypeId,
    pub positives: Vec<EdgeId>,
    /// `neg_per_pos` pairs per positive, grouped by positive.
    pub negatives: Vec<(NodeId, NodeId)>,
    /// Nodes of the storage batch, sorted.
    pub members: Vec<NodeId>,
}

impl MiniBatch {
    /// The message graph for this minibatch: the storage batch with the
    /// supervision edges removed.
    pub fn view<'g>(&self, g: &'g HetGraph) -> MessageView<'g> {
        self.view_masking(g, &self.positives)
    }

    /// The storage batch with only `masked` removed.
    pub fn view_masking<'g>(&self, g: &'g HetGraph, masked: &[EdgeId]) -> MessageView<'g> {
        g.view()
            .with_members(&self.members)
            .with_masked_edges(masked.iter().copied())
    }

    /// Positives `range` with their negatives.
    pub fn slice(&self, range: std::ops::Range<usize>) -> MiniBatch {
        let k = self.negatives.len() / self.positives.len().max(1);
        MiniBatch {
            etype: self.etype,
            negatives: self.negatives[range.start * k..range.end * k].to_vec(),
            positives: self.positives[range].to_vec(),
            members: self.members.clone(),
        }
    }

    /// Distinct endpoints of positives and negatives, sorted.
    pub fn endpoints(&self, g: &HetGraph) -> Vec<NodeId> {
        let mut out: Vec<NodeId> = self
            .positives
            .iter()
            .flat_map(|&e| {
                let e = g.edge(e);
                [e.src, e.dst]
            })
            .chain(self.negatives.iter().flat_map(|&(u, v)| [u, v]))
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }
}

/// Edges with both endpoints in `nodes`, ascending.
pub fn intra_batch_edges(g: &HetGraph, nodes: &[NodeId]) -> Vec<EdgeId> {
    let mut inside = vec![false; g.n_nodes()];
    for &v in nodes {
        inside[v] = true;
    }
    let mut out: Vec<EdgeId> = nodes
        .iter()
        .flat_map(|&v| g.incidences(v).iter())
        .filter(|i| i.out && inside[i.nbr])
        .map(|i| i.edge)
        .collect();
    out.sort_unstable();
    out
}

/// Iterator over one epoch of round-robin minibatches.
pub struct RoundRobin<'g> {
    g: &'g HetGraph,
    members: Vec<NodeId>,
    /// Batch members grouped by node type, for negative sampling.
    pools: Vec<Vec<NodeId>>,
    queues: Vec<(EdgeTypeId, VecDeque<EdgeId>)>,
    cursor: usize,
    mb_size: usize,
    neg_per_pos: usize,
    rng: ChaCha8Rng,
}

/// Groups `supervision` by edge type (shuffled within type) and cycles the
/// configured type order, emitting up to `mb_size` edges per step.
pub fn round_robin<'g>(
    g: &'g HetGraph,
    members: &[NodeId],
    supervision: &[EdgeId],
    cfg: &RoundRobinConfig,
) -> Result<RoundRobin<'g>, BatchError> {
    if cfg.mb_size == 0 {
        return Err(BatchError::Config("mb_size must be at least 1".into()));
    }
    let ne = g.n_edge_types();
    let mut members = members.to_vec();
    members.sort_unstable();
    members.dedup();
    for &v in &members {
        g.check_node(v)?;
    }
    let mut by_type: Vec<Vec<EdgeId>> = vec![Vec::new(); ne];
    for &e in supervision {
        if e >= g.n_edges() {
            return Err(crate::hetgraph::GraphError::UnknownEdge(e).into());
        }
        by_type[g.edge(e).etype.index()].push(e);
    }
    let order = cfg
        .cycle
        .clone()
        .unwrap_or_else(|| g.registry().all_edge_types());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut queues = Vec::new();
    let mut listed = vec![false; ne];
    for t in order {
        if t.index() >= ne || listed[t.index()] {
            return Err(BatchError::Config(format!("bad or repeated type #{} in cycle order", t.0)));
        }
        listed[t.index()] = true;
        let mut edges = std::mem::take(&mut by_type[t.index()]);
        if edges.is_empty() {
            warn!("edge type {} has no supervision edges in this batch; skipped", g.registry().edge_type_name(t));
            continue;
        }
        edges.sort_unstable();
        edges.shuffle(&mut rng);
        queues.push((t, edges.into()));
    }
    if let Some(t) = by_type.iter().position(|v| !v.is_empty()) {
        return Err(BatchError::Config(format!("cycle order omits edge type #{t}")));
    }
    let mut pools = vec![Vec::new(); g.registry().n_node_types()];
    for &v in &members {
        pools[g.node_type(v).index()].push(v);
    }
    Ok(RoundRobin {
        g,
        members,
        pools,
        queues,
        cursor: 0,
        mb_size: cfg.mb_size,
        neg_per_pos: cfg.neg_per_pos,
        rng,
    })
}

impl RoundRobin<'_> {
    fn has_edge(&self, u: NodeId, v: NodeId, t: EdgeTypeId) -> bool {
        self.g.typed_incidences(u, t).iter().any(|i| i.nbr == v)
    }

    /// Replaces one endpoint, chosen uniformly, by a random node of the same
    /// type; retries a bounded number of times on hitting a real edge.
    fn negative(&mut self, e: EdgeId) -> (NodeId, NodeId) {
        let edge = self.g.edge(e);
        let mut last = (edge.src, edge.dst);
        for _ in 0..32 {
            let flip_src = self.rng.random_bool(0.5);
            let keep = if flip_src { edge.dst } else { edge.src };
            let old = if flip_src { edge.src } else { edge.dst };
            let tt = self.g.node_type(old).index();
            let pool: &[NodeId] = if self.pools[tt].len() > 1 {
                &self.pools[tt]
            } else {
                self.g.nodes_of_type(self.g.node_type(old))
            };
            let w = pool[self.rng.random_range(0..pool.len())];
            let pair = if flip_src { (w, keep) } else { (keep, w) };
            last = pair;
            if pair.0 != pair.1 && !self.has_edge(pair.0, pair.1, edge.etype) {
                return pair;
            }
        }
        last
    }
}

impl Iterator for RoundRobin<'_> {
    type Item = MiniBatch;

    fn next(&mut self) -> Option<MiniBatch> {
        let n = self.queues.len();
        for step in 0..n {
            let i = (self.cursor + step) % n;
            if self.queues[i].1.is_empty() {
                continue;
            }
            self.cursor = (i + 1) % n;
            let take = self.mb_size.min(self.queues[i].1.len());
            let etype = self.queues[i].0;
            let positives: Vec<EdgeId> = self.queues[i].1.drain(..take).collect();
            let mut negatives = Vec::with_capacity(positives.len() * self.neg_per_pos);
            for &e in &positives {
                for _ in 0..self.neg_per_pos {
                    let pair = self.negative(e);
                    negatives.push(pair);
                }
            }
            return Some(MiniBatch {
                etype,
                positives,
                negatives,
                members: self.members.clone(),
            });
        }
        None
    }
}
