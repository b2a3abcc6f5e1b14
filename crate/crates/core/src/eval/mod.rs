//! Evaluation on frozen embeddings: probing, few-shot, zero-shot links,
//! 2-D projection and metrics.

mod embed;
mod metrics;
mod pca;
mod probe;
mod zeroshot;

pub use embed::{embed_frozen, raw_features, EmbedOptions};
pub use metrics::{class_rate, mae, prauc};
pub use pca::{pca2, Pca2};
pub use probe::{
    few_shot, few_shot_ids, probe, split_indices, train_probe, CellResult, Dataset, ProbeConfig, ProbeGrid,
    ProbeReport, ProbeRun, Split,
};
pub use zeroshot::{zero_shot_links, LinkTask, ZeroShotReport};

use crate::hetgraph::GraphError;
use crate::model::ModelError;
use crate::numerics::NumericsError;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("invalid evaluation input: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("empty input")]
    Empty,
    #[error("non-finite input")]
    NonFinite,
    #[error("no positive labels")]
    NoPositives,
    #[error("training split has a single class")]
    SingleClass,
    #[error("class {class} has {have} training examples, {want} requested")]
    NotEnoughExamples { class: usize, have: usize, want: usize },
    #[error("zero-shot evaluation is defined for link tasks only, not node-level tasks")]
    NodeLevelZeroShot,
    #[error("data has no variance")]
    RankZero,
    #[error("need at least {need} samples, got {have}")]
    TooFewSamples { have: usize, need: usize },
}
