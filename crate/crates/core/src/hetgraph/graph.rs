use std::collections::HashMap;

use super::{
    Direction, EdgeId, EdgeTypeId, GraphError, MessageView, NodeId, NodeTypeId, TypeAttribute,
    TypeRegistry,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Edge {
    pub src: NodeId,
    pub dst: NodeId,
    pub etype: EdgeTypeId,
}

/// One adjacency entry of node `v`: the other endpoint, the edge, and whether
/// `v` is the edge's source.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Incidence {
    pub nbr: NodeId,
    pub edge: EdgeId,
    pub out: bool,
}

impl Incidence {
    #[inline]
    pub fn matches(&self, dir: Direction) -> bool {
        match dir {
            Direction::Both => true,
            Direction::Out => self.out,
            Direction::In => !self.out,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HetGraph {
    registry: TypeRegistry,
    node_type: Vec<NodeTypeId>,
    feat_offset: Vec<usize>,
    features: Vec<f64>,
    external_ids: Vec<String>,
    external_index: HashMap<String, NodeId>,
    edges: Vec<Edge>,
    adj_offsets: Vec<usize>,
    adj: Vec<Incidence>,
    by_type: Vec<Vec<NodeId>>,
    edge_type_counts: Vec<usize>,
}

impl HetGraph {
    pub fn registry(&self) -> &TypeRegistry {
        &self.registry
    }

    pub fn n_nodes(&self) -> usize {
        self.node_type.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn n_edge_types(&self) -> usize {
        self.registry.n_edge_types()
    }

    pub fn contains(&self, v: NodeId) -> bool {
        v < self.n_nodes()
    }

    pub fn check_node(&self, v: NodeId) -> Result<(), GraphError> {
        if self.contains(v) {
            Ok(())
        } else {
            Err(GraphError::UnknownNode(v))
        }
    }

    #[inline]
    pub fn node_type(&self, v: NodeId) -> NodeTypeId {
        self.node_type[v]
    }

    #[inline]
    pub fn features(&self, v: NodeId) -> &[f64] {
        &self.features[self.feat_offset[v]..self.feat_offset[v + 1]]
    }

    pub fn external_id(&self, v: NodeId) -> &str {
        &self.external_ids[v]
    }

    pub fn node_by_external(&self, id: &str) -> Option<NodeId> {
        self.external_index.get(id).copied()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    #[inline]
    pub fn edge(&self, e: EdgeId) -> Edge {
        self.edges[e]
    }

    /// All adjacency entries of `v`, grouped by edge type.
    #[inline]
    pub fn incidences(&self, v: NodeId) -> &[Incidence] {
        let ne = self.n_edge_types();
        &self.adj[self.adj_offsets[v * ne]..self.adj_offsets[(v + 1) * ne]]
    }

    /// Adjacency entries of `v` with edge type `t`, sorted by neighbor id.
    #[inline]
    pub fn typed_incidences(&self, v: NodeId, t: EdgeTypeId) -> &[Incidence] {
        let k = v * self.n_edge_types() + t.index();
        &self.adj[self.adj_offsets[k]..self.adj_offsets[k + 1]]
    }

    pub fn nodes_of_type(&self, t: NodeTypeId) -> &[NodeId] {
        &self.by_type[t.index()]
    }

    pub fn node_type_counts(&self) -> Vec<usize> {
        self.by_type.iter().map(Vec::len).collect()
    }

    pub fn edge_type_counts(&self) -> &[usize] {
        &self.edge_type_counts
    }

    /// Undirected view of the whole graph.
    pub fn view(&self) -> MessageView<'_> {
        MessageView::new(self)
    }

    /// Nodes joined to `v` by an edge whose type is in `set`, sorted by id.
    pub fn neighbors_by_set(&self, v: NodeId, set: &[EdgeTypeId]) -> Result<Vec<NodeId>, GraphError> {
        self.view().neighbors_by_set(v, set)
    }

    /// Normalized counts of the chosen type attribute over `nodes`.
    ///
    /// For edge types the counted edges are those induced by `nodes`.
    pub fn type_distribution(&self, nodes: &[NodeId], attr: TypeAttribute) -> Result<Vec<f64>, GraphError> {
        if nodes.is_empty() {
            return Err(GraphError::EmptyMembers);
        }
        for &v in nodes {
            self.check_node(v)?;
        }
        let counts = match attr {
            TypeAttribute::NodeType => {
                let mut c = vec![0usize; self.registry.n_node_types()];
                for &v in nodes {
                    c[self.node_type(v).index()] += 1;
                }
                c
            }
            TypeAttribute::EdgeType => {
                let mut member = vec![false; self.n_nodes()];
                for &v in nodes {
                    member[v] = true;
                }
                let mut c = vec![0usize; self.n_edge_types()];
                let mut sorted = nodes.to_vec();
                sorted.sort_unstable();
                sorted.dedup();
                for &v in &sorted {
                    for inc in self.incidences(v) {
                        if inc.out && member[inc.nbr] {
                            c[self.edges[inc.edge].etype.index()] += 1;
                        }
                    }
                }
                c
            }
        };
        normalize_counts(&counts)
    }

    /// Normalized edge-type counts over an explicit edge subset.
    pub fn edge_type_distribution(&self, edges: &[EdgeId]) -> Result<Vec<f64>, GraphError> {
        if edges.is_empty() {
            return Err(GraphError::EmptyMembers);
        }
        let mut c = vec![0usize; self.n_edge_types()];
        for &e in edges {
            if e >= self.n_edges() {
                return Err(GraphError::UnknownEdge(e));
            }
            c[self.edges[e].etype.index()] += 1;
        }
        normalize_counts(&c)
    }

    /// Rebuilds the adjacency index from the edge list and compares.
    pub fn verify_adjacency(&self) -> bool {
        let (o, a) = build_adjacency(self.n_nodes(), self.n_edge_types(), &self.edges);
        o == self.adj_offsets && a == self.adj
    }

    /// Raw CSR arrays, for serialization.
    pub(crate) fn adjacency_parts(&self) -> (&[usize], &[Incidence]) {
        (&self.adj_offsets, &self.adj)
    }
}

pub(crate) fn normalize_counts(counts: &[usize]) -> Result<Vec<f64>, GraphError> {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return Err(GraphError::EmptyMembers);
    }
    Ok(counts.iter().map(|&c| c as f64 / total as f64).collect())
}

fn build_adjacency(n: usize, ne: usize, edges: &[Edge]) -> (Vec<usize>, Vec<Incidence>) {
    let mut counts = vec![0usize; n * ne + 1];
    for e in edges {
        counts[e.src * ne + e.etype.index() + 1] += 1;
        counts[e.dst * ne + e.etype.index() + 1] += 1;
    }
    for i in 1..counts.len() {
        counts[i] += counts[i - 1];
    }
    let offsets = counts;
    let mut fill = offsets.clone();
    let mut adj = vec![
        Incidence {
            nbr: 0,
            edge: 0,
            out: false
        };
        edges.len() * 2
    ];
    for (id, e) in edges.iter().enumerate() {
        let ks = e.src * ne + e.etype.index();
        adj[fill[ks]] = Incidence {
            nbr: e.dst,
            edge: id,
            out: true,
        };
        fill[ks] += 1;
        let kd = e.dst * ne + e.etype.index();
        adj[fill[kd]] = Incidence {
            nbr: e.src,
            edge: id,
            out: false,
        };
        fill[kd] += 1;
    }
    for k in 0..n * ne {
        adj[offsets[k]..offsets[k + 1]].sort_unstable();
    }
    (offsets, adj)
}

/// Single-writer bulk construction of a [`HetGraph`].
#[derive(Debug, Clone, Default)]
pub struct GraphBuilder {
    registry: TypeRegistry,
    node_type: Vec<NodeTypeId>,
    feat_offset: Vec<usize>,
    features: Vec<f64>,
    external_ids: Vec<String>,
    external_index: HashMap<String, NodeId>,
    edges: Vec<Edge>,
}

impl GraphBuilder {
    pub fn new(registry: TypeRegistry) -> Self {
        Self {
            registry,
            feat_offset: vec![0],
            ..Default::default()
        }
    }

    pub fn registry(&self) -> &TypeRegistry {
        &self.registry
    }

    pub fn n_nodes(&self) -> usize {
        self.node_type.len()
    }

    pub fn external(&self, id: &str) -> Option<NodeId> {
        self.external_index.get(id).copied()
    }

    pub fn add_node(&mut self, external_id: impl Into<String>, t: NodeTypeId, x: &[f64]) -> Result<NodeId, GraphError> {
        let id = external_id.into();
        if t.index() >= self.registry.n_node_types() {
            return Err(GraphError::UnknownNodeType(format!("#{}", t.0)));
        }
        let expected = self.registry.dim(t);
        if x.len() != expected {
            return Err(GraphError::DimensionMismatch {
                id,
                expected,
                got: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(GraphError::NonFiniteFeature(id));
        }
        if self.external_index.contains_key(&id) {
            return Err(GraphError::DuplicateId(id));
        }
        let v = self.node_type.len();
        self.external_index.insert(id.clone(), v);
        self.external_ids.push(id);
        self.node_type.push(t);
        self.features.extend_from_slice(x);
        self.feat_offset.push(self.features.len());
        Ok(v)
    }

    /// Adds a node whose external id is its dense index.
    pub fn add_anon_node(&mut self, t: NodeTypeId, x: &[f64]) -> Result<NodeId, GraphError> {
        let id = self.node_type.len().to_string();
        self.add_node(id, t, x)
    }

    pub fn add_edge(&mut self, src: NodeId, dst: NodeId, etype: EdgeTypeId) -> Result<EdgeId, GraphError> {
        let n = self.node_type.len();
        if src >= n {
            return Err(GraphError::UnknownNode(src));
        }
        if dst >= n {
            return Err(GraphError::UnknownNode(dst));
        }
        if etype.index() >= self.registry.n_edge_types() {
            return Err(GraphError::UnknownEdgeType(format!("#{}", etype.0)));
        }
        if src == dst {
            return Err(GraphError::SelfLoop(self.external_ids[src].clone()));
        }
        self.edges.push(Edge { src, dst, etype });
        Ok(self.edges.len() - 1)
    }

    pub fn build(self) -> HetGraph {
        let n = self.node_type.len();
        let ne = self.registry.n_edge_types();
        let (adj_offsets, adj) = build_adjacency(n, ne, &self.edges);
        let mut by_type = vec![Vec::new(); self.registry.n_node_types()];
        for (v, t) in self.node_type.iter().enumerate() {
            by_type[t.index()].push(v);
        }
        let mut edge_type_counts = vec![0; ne];
        for e in &self.edges {
            edge_type_counts[e.etype.index()] += 1;
        }
        HetGraph {
            registry: self.registry,
            node_type: self.node_type,
            feat_offset: self.feat_offset,
            features: self.features,
            external_ids: self.external_ids,
            external_index: self.external_index,
            edges: self.edges,
            adj_offsets,
            adj,
            by_type,
            edge_type_counts,
        }
    }
}
