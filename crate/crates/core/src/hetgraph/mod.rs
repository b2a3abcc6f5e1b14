//! Immutable heterogeneous graph store.
//!
//! Nodes carry a node type and a feature vector whose length is fixed per
//! type. Edges are stored directed with an edge type; neighborhood queries
//! default to the undirected view. Node ids are dense and assigned at ingest.

mod graph;
mod io;
mod view;

pub use graph::{Edge, GraphBuilder, HetGraph, Incidence};
pub use io::{load_cache, load_jsonl, save_cache, write_jsonl, EdgeRecord, NodeRecord};
pub use view::{sample_seed, EgoCenter, EgoGraph, MessageView};

use serde::{Deserialize, Serialize};

pub type NodeId = usize;
pub type EdgeId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeTypeId(pub u16);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EdgeTypeId(pub u16);

impl NodeTypeId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl EdgeTypeId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Which incident edges count as neighbors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    #[default]
    Both,
    /// Only edges `(u, v)` pointing into `v`.
    In,
    /// Only edges `(v, u)` leaving `v`.
    Out,
}

/// Which type attribute a distribution is taken over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TypeAttribute {
    NodeType,
    EdgeType,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeTypeSpec {
    pub name: String,
    pub dim: usize,
}

/// Maps dense type ids to names and, for node types, feature dimensions.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TypeRegistry {
    node_types: Vec<NodeTypeSpec>,
    edge_types: Vec<String>,
}

impl TypeRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_node_type(&mut self, name: impl Into<String>, dim: usize) -> Result<NodeTypeId, GraphError> {
        let name = name.into();
        if dim == 0 {
            return Err(GraphError::ZeroDim(name));
        }
        if self.node_type_id(&name).is_some() {
            return Err(GraphError::DuplicateType(name));
        }
        self.node_types.push(NodeTypeSpec { name, dim });
        Ok(NodeTypeId((self.node_types.len() - 1) as u16))
    }

    pub fn add_edge_type(&mut self, name: impl Into<String>) -> Result<EdgeTypeId, GraphError> {
        let name = name.into();
        if self.edge_type_id(&name).is_some() {
            return Err(GraphError::DuplicateType(name));
        }
        self.edge_types.push(name);
        Ok(EdgeTypeId((self.edge_types.len() - 1) as u16))
    }

    pub fn n_node_types(&self) -> usize {
        self.node_types.len()
    }

    pub fn n_edge_types(&self) -> usize {
        self.edge_types.len()
    }

    pub fn node_type(&self, t: NodeTypeId) -> &NodeTypeSpec {
        &self.node_types[t.index()]
    }

    pub fn node_types(&self) -> &[NodeTypeSpec] {
        &self.node_types
    }

    pub fn edge_type_name(&self, t: EdgeTypeId) -> &str {
        &self.edge_types[t.index()]
    }

    pub fn edge_type_names(&self) -> &[String] {
        &self.edge_types
    }

    pub fn dim(&self, t: NodeTypeId) -> usize {
        self.node_types[t.index()].dim
    }

    pub fn node_type_id(&self, name: &str) -> Option<NodeTypeId> {
        self.node_types
            .iter()
            .position(|s| s.name == name)
            .map(|i| NodeTypeId(i as u16))
    }

    pub fn edge_type_id(&self, name: &str) -> Option<EdgeTypeId> {
        self.edge_types
            .iter()
            .position(|s| s == name)
            .map(|i| EdgeTypeId(i as u16))
    }

    pub fn all_edge_types(&self) -> Vec<EdgeTypeId> {
        (0..self.edge_types.len()).map(|i| EdgeTypeId(i as u16)).collect()
    }

    /// True if `other` starts with exactly this registry's types.
    pub fn is_prefix_of(&self, other: &TypeRegistry) -> bool {
        other.node_types.len() >= self.node_types.len()
            && other.edge_types.len() >= self.edge_types.len()
            && other.node_types[..self.node_types.len()] == self.node_types[..]
            && other.edge_types[..self.edge_types.len()] == self.edge_types[..]
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GraphError {
    #[error("unknown node id {0}")]
    UnknownNode(NodeId),
    #[error("unknown edge id {0}")]
    UnknownEdge(EdgeId),
    #[error("unknown node type {0:?}")]
    UnknownNodeType(String),
    #[error("unknown edge type {0:?}")]
    UnknownEdgeType(String),
    #[error("type {0:?} registered twice")]
    DuplicateType(String),
    #[error("node type {0:?} has zero feature dimension")]
    ZeroDim(String),
    #[error("node {id:?}: feature length {got}, type expects {expected}")]
    DimensionMismatch { id: String, expected: usize, got: usize },
    #[error("duplicate node id {0:?}")]
    DuplicateId(String),
    #[error("{file}:{line}: edge endpoint {id:?} is not a known node")]
    DanglingEndpoint { file: String, line: usize, id: String },
    #[error("{file}:{line}: malformed record: {msg}")]
    Malformed { file: String, line: usize, msg: String },
    #[error("self-loop on node {0:?}")]
    SelfLoop(String),
    #[error("non-finite feature on node {0:?}")]
    NonFiniteFeature(String),
    #[error("empty member set")]
    EmptyMembers,
    #[error("cache: {0}")]
    BadCache(String),
    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for GraphError {
    fn from(e: std::io::Error) -> Self {
        GraphError::Io(e.to_string())
    }
}

/// Connected components of the undirected view; labels are dense and ordered
/// by smallest member id.
pub fn connected_components(g: &HetGraph) -> Vec<usize> {
    let n = g.n_nodes();
    let mut label = vec![usize::MAX; n];
    let mut next = 0;
    let mut stack = Vec::new();
    for s in 0..n {
        if label[s] != usize::MAX {
            continue;
        }
        label[s] = next;
        stack.push(s);
        while let Some(v) = stack.pop() {
            for inc in g.incidences(v) {
                if label[inc.nbr] == usize::MAX {
                    label[inc.nbr] = next;
                    stack.push(inc.nbr);
                }
            }
        }
        next += 1;
    }
    label
}
