use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::hetgraph::{Direction, EdgeTypeId, HetGraph, MessageView, TypeRegistry};

/// Which attention branches feed the block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationMode {
    #[default]
    Full,
    TcaOnly,
    TaaOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NeighborhoodConfig {
    pub direction: Direction,
    pub taa_hops: usize,
    pub taa_cap: usize,
    /// Whether a node attends to itself in TAA.
    pub taa_include_self: bool,
}

impl Default for NeighborhoodConfig {
    fn default() -> Self {
        Self {
            direction: Direction::Both,
            taa_hops: 2,
            taa_cap: 10,
            taa_include_self: true,
        }
    }
}

impl NeighborhoodConfig {
    /// A whole-graph view with this config's direction.
    pub fn view<'g>(&self, g: &'g HetGraph) -> MessageView<'g> {
        g.view().with_direction(self.direction)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub registry: TypeRegistry,
    pub layers: usize,
    /// Hidden width shared by every layer.
    pub d_model: usize,
    pub heads: usize,
    /// Edge-type sets for TCA; each must be nonempty and together they must
    /// cover every edge type.
    pub edge_sets: Vec<Vec<EdgeTypeId>>,
    pub phi_hidden: usize,
    pub ffn_hidden: usize,
    pub dropout: f64,
    /// Hidden width of the link head; `None` builds no head.
    pub head_hidden: Option<usize>,
    #[serde(default)]
    pub neighborhood: NeighborhoodConfig,
}

impl ModelConfig {
    /// A config with singleton edge sets and common defaults.
    pub fn new(registry: TypeRegistry, layers: usize, d_model: usize, heads: usize) -> Self {
        let edge_sets = registry.all_edge_types().into_iter().map(|t| vec![t]).collect();
        Self {
            registry,
            layers,
            d_model,
            heads,
            edge_sets,
            phi_hidden: d_model,
            ffn_hidden: 2 * d_model,
            dropout: 0.0,
            head_hidden: Some(d_model),
            neighborhood: NeighborhoodConfig::default(),
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads.max(1)
    }

    pub fn n_node_types(&self) -> usize {
        self.registry.n_node_types()
    }

    pub fn n_edge_types(&self) -> usize {
        self.registry.n_edge_types()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::Config(m));
        if self.d_model == 0 || self.heads == 0 {
            return bad("d_model and heads must be positive".into());
        }
        if self.d_model % self.heads != 0 {
            return bad(format!("d_model {} not divisible by heads {}", self.d_model, self.heads));
        }
        if self.layers > 0 && (self.phi_hidden == 0 || self.ffn_hidden == 0) {
            return bad("phi_hidden and ffn_hidden must be positive".into());
        }
        if self.head_hidden == Some(0) {
            return bad("head_hidden must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)".into());
        }
        if self.neighborhood.taa_cap == 0 {
            return bad("taa_cap must be at least 1".into());
        }
        if self.registry.n_node_types() == 0 {
            return bad("at least one node type is required".into());
        }
        let ne = self.n_edge_types();
        let mut covered = vec![false; ne];
        for s in &self.edge_sets {
            if s.is_empty() {
                return bad("edge sets must be nonempty".into());
            }
            for t in s {
                if t.index() >= ne {
                    return Err(ModelError::UnknownEdgeType(t.0));
                }
                covered[t.index()] = true;
            }
        }
        if let Some(t) = covered.iter().position(|c| !c) {
            return bad(format!("edge type #{t} is not covered by any edge set"));
        }
        Ok(())
    }

    /// Errors unless one registry extends the other. Types missing from the
    /// graph simply never occur; node types missing from the model are
    /// rejected when a node of that type is encoded.
    pub fn check_graph(&self, g: &HetGraph) -> Result<(), ModelError> {
        if self.registry.is_prefix_of(g.registry()) || g.registry().is_prefix_of(&self.registry) {
            Ok(())
        } else {
            Err(ModelError::IncompatibleTypes(
                "graph and model type registries diverge".into(),
            ))
        }
    }

    /// Errors unless `g` uses exactly the types this model knows.
    pub fn check_graph_known(&self, g: &HetGraph) -> Result<(), ModelError> {
        self.check_graph(g)?;
        if g.registry() != &self.registry {
            return Err(ModelError::IncompatibleTypes(
                "graph has types unknown to the model; extend the model first".into(),
            ));
        }
        Ok(())
    }
}
