//! Masked link-prediction pretraining.

mod data;
mod loss;
mod schedule;
mod trace;
mod train;

pub use data::{component_split, load_training_data, LoadedBatch, NodeSplit, TrainingData};
pub use loss::{masked_lp_loss, LossOptions, LpLoss};
pub use schedule::{lr_schedule, LrSchedule};
pub use trace::{LossTrace, TraceEntry, TraceSplit};
pub use train::{pretrain, steps_per_epoch, PretrainOutcome};

use serde::{Deserialize, Serialize};

use crate::batching::{BatchError, KlWeights, PackVariant};
use crate::hetgraph::{EdgeId, GraphError};
use crate::model::{AblationMode, ModelError};
use crate::numerics::NumericsError;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PretrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Batch(#[from] BatchError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("holdout overlaps training data: {0}")]
    HoldoutOverlap(String),
    #[error("minibatch has no positive edges")]
    EmptyMiniBatch,
    #[error("loss is not finite ({0})")]
    NonFiniteLoss(f64),
    #[error("supervision edge {0} is visible in its own message graph")]
    MaskLeak(EdgeId),
    #[error("requested {requested} supervised edges, only {available} available")]
    InsufficientData { requested: usize, available: usize },
    #[error("holdout has no edges")]
    EmptyHoldout,
    #[error("io: {0}")]
    Io(String),
}

fn default_check_masking() -> bool {
    cfg!(debug_assertions)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// `D`: distinct supervised training edges.
    pub data_size: usize,
    /// Supervised edges per optimization step.
    pub step_batch: usize,
    pub lr: f64,
    pub warmup_frac: f64,
    pub epochs: usize,
    /// Fraction of each minibatch's positives hidden from the message graph.
    pub mask_ratio: f64,
    pub neg_per_pos: usize,
    /// Epochs without validation improvement before stopping; 0 disables.
    pub patience: usize,
    pub seed: u64,
    /// Write a checkpoint every this many epochs; 0 writes only the best.
    pub checkpoint_every: usize,
    pub weight_decay: f64,
    /// Storage batch budget in cost units.
    pub storage_budget: f64,
    /// Label propagation cluster size cap.
    pub cluster_max: usize,
    pub pack: PackVariant,
    pub kl_weights: KlWeights,
    /// Cap on holdout positives used for validation.
    pub val_edges: usize,
    pub mode: AblationMode,
    #[serde(default = "default_check_masking")]
    pub check_masking: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            data_size: 1024,
            step_batch: 1024,
            lr: 1e-3,
            warmup_frac: 0.02,
            epochs: 10,
            mask_ratio: 1.0,
            neg_per_pos: 1,
            patience: 3,
            seed: 0,
            checkpoint_every: 0,
            weight_decay: 0.0,
            storage_budget: 20_000.0,
            cluster_max: 64,
            pack: PackVariant::Sequential,
            kl_weights: KlWeights::default(),
            val_edges: 4096,
            mode: AblationMode::Full,
            check_masking: default_check_masking(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), PretrainError> {
        let bad = |m: &str| Err(PretrainError::Config(m.into()));
        if self.data_size == 0 {
            return bad("data_size must be at least 1");
        }
        if self.step_batch == 0 || self.epochs == 0 || self.neg_per_pos == 0 {
            return bad("step_batch, epochs and neg_per_pos must be positive");
        }
        if !(self.warmup_frac > 0.0 && self.warmup_frac < 1.0) {
            return bad("warmup_frac must lie in (0, 1)");
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return bad("lr must be positive");
        }
        if !(0.0..=1.0).contains(&self.mask_ratio) {
            return bad("mask_ratio must lie in [0, 1]");
        }
        if !(self.storage_budget > 0.0) || self.cluster_max == 0 || self.val_edges == 0 {
            return bad("storage_budget, cluster_max and val_edges must be positive");
        }
        Ok(())
    }
}
