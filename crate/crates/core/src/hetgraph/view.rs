use std::collections::{HashSet, VecDeque};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Direction, EdgeId, EdgeTypeId, GraphError, HetGraph, NodeId};

/// A read-only window on a graph used for message passing: optionally
/// restricted to a member node set, with some edges hidden.
#[derive(Debug, Clone)]
pub struct MessageView<'g> {
    graph: &'g HetGraph,
    members: Option<Vec<bool>>,
    masked: HashSet<EdgeId>,
    direction: Direction,
}

impl<'g> MessageView<'g> {
    pub fn new(graph: &'g HetGraph) -> Self {
        Self {
            graph,
            members: None,
            masked: HashSet::new(),
            direction: Direction::Both,
        }
    }

    pub fn with_members(mut self, nodes: &[NodeId]) -> Self {
        let mut m = vec![false; self.graph.n_nodes()];
        for &v in nodes {
            m[v] = true;
        }
        self.members = Some(m);
        self
    }

    pub fn with_member_mask(mut self, mask: Vec<bool>) -> Self {
        assert_eq!(mask.len(), self.graph.n_nodes());
        self.members = Some(mask);
        self
    }

    pub fn with_masked_edges(mut self, edges: impl IntoIterator<Item = EdgeId>) -> Self {
        self.masked.extend(edges);
        self
    }

    pub fn with_direction(mut self, direction: Direction) -> Self {
        self.direction = direction;
        self
    }

    pub fn graph(&self) -> &'g HetGraph {
        self.graph
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    pub fn masked_edges(&self) -> &HashSet<EdgeId> {
        &self.masked
    }

    #[inline]
    pub fn is_member(&self, v: NodeId) -> bool {
        self.members.as_ref().is_none_or(|m| m[v])
    }

    #[inline]
    fn visible(&self, inc: &super::Incidence) -> bool {
        inc.matches(self.direction) && self.is_member(inc.nbr) && !self.masked.contains(&inc.edge)
    }

    /// `𝒩^S_v`: nodes joined to `v` by a visible edge with type in `set`,
    /// sorted and deduplicated.
    pub fn neighbors_by_set(&self, v: NodeId, set: &[EdgeTypeId]) -> Result<Vec<NodeId>, GraphError> {
        self.graph.check_node(v)?;
        let mut out = Vec::new();
        for &t in set {
            if t.index() >= self.graph.n_edge_types() {
                return Err(GraphError::UnknownEdgeType(format!("#{}", t.0)));
            }
            out.extend(
                self.graph
                    .typed_incidences(v, t)
                    .iter()
                    .filter(|i| self.visible(i))
                    .map(|i| i.nbr),
            );
        }
        out.sort_unstable();
        out.dedup();
        Ok(out)
    }

    /// All visible neighbors of `v` regardless of type, sorted and deduplicated.
    pub fn neighbors(&self, v: NodeId) -> Vec<NodeId> {
        let mut out: Vec<NodeId> = self
            .graph
            .incidences(v)
            .iter()
            .filter(|i| self.visible(i))
            .map(|i| i.nbr)
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Visible edges incident to `v`.
    pub fn incident_edges(&self, v: NodeId) -> impl Iterator<Item = EdgeId> + '_ {
        self.graph
            .incidences(v)
            .iter()
            .filter(move |i| self.visible(i))
            .map(|i| i.edge)
    }

    /// Fixed-degree sampled neighborhood of `v` (excluding `v`).
    ///
    /// Level 1 is the visible neighbor set; level `l+1` is the set of unseen
    /// neighbors of the nodes sampled at level `l`. At each level at most
    /// `cap` nodes are drawn uniformly without replacement, with an RNG keyed
    /// by `(seed, v, level)`. Each level's sample is returned sorted.
    pub fn sample_taa_neighborhood(
        &self,
        v: NodeId,
        hops: usize,
        cap: usize,
        seed: u64,
    ) -> Result<Vec<NodeId>, GraphError> {
        self.graph.check_node(v)?;
        assert!(cap >= 1, "per-hop cap must be at least 1");
        let mut seen: HashSet<NodeId> = HashSet::from([v]);
        let mut frontier = vec![v];
        let mut out = Vec::new();
        for level in 1..=hops {
            let mut candidates = Vec::new();
            for &u in &frontier {
                candidates.extend(self.neighbors(u));
            }
            candidates.sort_unstable();
            candidates.dedup();
            candidates.retain(|u| !seen.contains(u));
            seen.extend(candidates.iter().copied());
            if candidates.is_empty() {
                break;
            }
            let mut picked = if candidates.len() <= cap {
                candidates
            } else {
                let mut rng = ChaCha8Rng::seed_from_u64(sample_seed(seed, v as u64, level as u64));
                rand::seq::index::sample(&mut rng, candidates.len(), cap)
                    .into_iter()
                    .map(|i| candidates[i])
                    .collect()
            };
            picked.sort_unstable();
            out.extend_from_slice(&picked);
            frontier = picked;
        }
        Ok(out)
    }

    /// Nodes within `k` undirected hops of the center, restricted to members
    /// and visible edges.
    pub fn ego_graph(&self, center: EgoCenter, k: usize) -> Result<EgoGraph, GraphError> {
        let roots = match center {
            EgoCenter::Node(v) => {
                self.graph.check_node(v)?;
                vec![v]
            }
            EgoCenter::Edge(e) => {
                if e >= self.graph.n_edges() {
                    return Err(GraphError::UnknownEdge(e));
                }
                let ed = self.graph.edge(e);
                vec![ed.src, ed.dst]
            }
        };
        let undirected = MessageView {
            direction: Direction::Both,
            ..self.clone()
        };
        let mut dist = std::collections::HashMap::new();
        let mut queue = VecDeque::new();
        for r in roots {
            dist.insert(r, 0usize);
            queue.push_back(r);
        }
        while let Some(u) = queue.pop_front() {
            let d = dist[&u];
            if d == k {
                continue;
            }
            for w in undirected.neighbors(u) {
                if let std::collections::hash_map::Entry::Vacant(slot) = dist.entry(w) {
                    slot.insert(d + 1);
                    queue.push_back(w);
                }
            }
        }
        let mut nodes: Vec<NodeId> = dist.into_keys().collect();
        nodes.sort_unstable();
        let mut member = vec![false; self.graph.n_nodes()];
        for &v in &nodes {
            member[v] = true;
        }
        let mut edges = Vec::new();
        for &v in &nodes {
            for inc in self.graph.incidences(v) {
                if inc.out && member[inc.nbr] && !self.masked.contains(&inc.edge) {
                    edges.push(inc.edge);
                }
            }
        }
        edges.sort_unstable();
        Ok(EgoGraph {
            center,
            radius: k,
            nodes,
            edges,
        })
    }
}

/// Mixes a seed with two counters into an RNG seed (splitmix64 finalizer).
pub fn sample_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed
        .wrapping_add(a.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(b.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EgoCenter {
    Node(NodeId),
    Edge(EdgeId),
}

/// Induced k-hop neighborhood of a node or an edge, in parent-graph ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EgoGraph {
    pub center: EgoCenter,
    pub radius: usize,
    /// Sorted parent node ids.
    pub nodes: Vec<NodeId>,
    /// Sorted parent edge ids with both endpoints in `nodes`.
    pub edges: Vec<EdgeId>,
}

impl EgoGraph {
    /// A message view restricted to this ego-graph's members.
    pub fn view<'g>(&self, g: &'g HetGraph) -> MessageView<'g> {
        MessageView::new(g).with_members(&self.nodes)
    }
}
