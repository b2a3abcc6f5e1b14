//! The heterogeneous graph transformer: type-conditioned attention (TCA) over
//! edge-type sets, type-agnostic attention (TAA) over a sampled neighborhood,
//! a combiner MLP, a post-LN residual block, and a link-prediction head.

mod checkpoint;
mod config;
mod forward;
mod params;
mod single;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use config::{AblationMode, ModelConfig, NeighborhoodConfig};
pub use forward::{encode, link_logits, Context, EncodeOptions, Encoded, LayerTrace};
pub use params::{param_count, param_specs, ModelParams, ParamCount, ParamShare, ParamSpec};
pub use single::{block_forward, combine_phi, embed_input, link_score, taa_forward, tca_forward};

use crate::hetgraph::GraphError;
use crate::numerics::NumericsError;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("unknown edge type #{0}")]
    UnknownEdgeType(u16),
    #[error("model has no link head")]
    NoHead,
    #[error("feature length {got} does not match node type dim {expected}")]
    FeatureDim { expected: usize, got: usize },
    #[error("graph types are not an extension of the model's types: {0}")]
    IncompatibleTypes(String),
    #[error("type {0:?} already registered")]
    TypeCollision(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("layer {0} out of range")]
    Layer(usize),
}
