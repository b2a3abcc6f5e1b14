use std::path::Path;

use log::info;
use rayon::prelude::*;

use super::data::{load_training_data, NodeSplit, TrainingData};
use super::loss::{masked_lp_loss, LossOptions};
use super::schedule::{lr_schedule, LrSchedule};
use super::trace::LossTrace;
use super::{PretrainError, TrainConfig};
use crate::batching::{intra_batch_edges, round_robin, MiniBatch, RoundRobinConfig};
use crate::hetgraph::{sample_seed, HetGraph};
use crate::model::{save_checkpoint, EncodeOptions, ModelParams};
use crate::numerics::{adam_step, AdamConfig, Gradients, OptimizerState};

pub fn steps_per_epoch(data_size: usize, step_batch: usize) -> usize {
    data_size.div_ceil(step_batch)
}

pub struct PretrainOutcome {
    /// Parameters at the best validation loss.
    pub best: ModelParams,
    pub last: ModelParams,
    pub trace: LossTrace,
    pub steps: usize,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub stopped_early: bool,
    pub schedule: LrSchedule,
    pub data: TrainingData,
}

impl PretrainOutcome {
    pub fn best_val(&self) -> f64 {
        self.trace.best_val().unwrap_or(f64::INFINITY)
    }
}

fn loss_options(cfg: &TrainConfig, params: &ModelParams, seed: u64, train: bool) -> LossOptions {
    let dropout = train && params.config().dropout > 0.0;
    LossOptions {
        mask_ratio: cfg.mask_ratio,
        mask_seed: sample_seed(seed, 1, 0),
        encode: EncodeOptions {
            mode: cfg.mode,
            seed: sample_seed(seed, 2, 0),
            dropout_seed: dropout.then(|| sample_seed(seed, 3, 0)),
            trace: false,
        },
        check_masking: cfg.check_masking,
    }
}

/// Loss and gradients of one step, averaged over all its positives. Chunks
/// are evaluated in parallel and summed in order.
fn step_gradients(
    params: &ModelParams,
    g: &HetGraph,
    chunks: &[MiniBatch],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(f64, Gradients), PretrainError> {
    let total: usize = chunks.iter().map(|c| c.positives.len()).sum();
    let parts: Vec<(f64, Gradients)> = chunks
        .par_iter()
        .enumerate()
        .map(|(i, mb)| {
            let opts = loss_options(cfg, params, sample_seed(seed, i as u64, 7), true);
            let l = masked_lp_loss(params, g, mb, &opts)?;
            let w = mb.positives.len() as f64 / total as f64;
            let mut grads = l.tape.backward(l.loss)?;
            grads.scale(w);
            Ok((w * l.value, grads))
        })
        .collect::<Result<_, PretrainError>>()?;
    let mut loss = 0.0;
    let mut acc = Gradients::default();
    for (l, gr) in &parts {
        loss += l;
        acc.accumulate(gr);
    }
    Ok((loss, acc))
}

/// Holdout minibatches, fixed for the whole run.
fn validation_batches(g: &HetGraph, split: &NodeSplit, cfg: &TrainConfig) -> Result<Vec<MiniBatch>, PretrainError> {
    let mut edges = intra_batch_edges(g, &split.holdout);
    if edges.is_empty() {
        return Err(PretrainError::EmptyHoldout);
    }
    if edges.len() > cfg.val_edges {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        edges.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(sample_seed(cfg.seed, 11, 0)));
        edges.truncate(cfg.val_edges);
        edges.sort_unstable();
    }
    let rr = RoundRobinConfig {
        mb_size: cfg.step_batch,
        neg_per_pos: cfg.neg_per_pos,
        cycle: None,
        seed: sample_seed(cfg.seed, 12, 0),
    };
    Ok(round_robin(g, &split.holdout, &edges, &rr)?.collect())
}

/// Mean holdout loss per positive, with fixed sampling seeds and no dropout.
pub(crate) fn validation_loss(
    params: &ModelParams,
    g: &HetGraph,
    batches: &[MiniBatch],
    cfg: &TrainConfig,
) -> Result<f64, PretrainError> {
    let total: usize = batches.iter().map(|b| b.positives.len()).sum();
    let parts: Vec<f64> = batches
        .par_iter()
        .enumerate()
        .map(|(i, mb)| {
            let opts = loss_options(cfg, params, sample_seed(cfg.seed, 13, i as u64), false);
            let l = masked_lp_loss(params, g, mb, &opts)?;
            Ok(l.value * mb.positives.len() as f64)
        })
        .collect::<Result<_, PretrainError>>()?;
    Ok(parts.iter().sum::<f64>() / total as f64)
}

/// Splits the epoch's round-robin stream into steps of exactly
/// `step_batch` positives (the last one may be short).
fn epoch_steps(
    g: &HetGraph,
    data: &TrainingData,
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<Vec<Vec<MiniBatch>>, PretrainError> {
    let mut steps = Vec::new();
    let mut cur: Vec<MiniBatch> = Vec::new();
    let mut fill = 0;
    for (bi, b) in data.batches.iter().enumerate() {
        let rr = RoundRobinConfig {
            mb_size: cfg.step_batch,
            neg_per_pos: cfg.neg_per_pos,
            cycle: None,
            seed: sample_seed(cfg.seed, epoch as u64, bi as u64),
        };
        for mb in round_robin(g, &b.members, &b.supervision, &rr)? {
            let mut at = 0;
            while at < mb.positives.len() {
                let take = (cfg.step_batch - fill).min(mb.positives.len() - at);
                cur.push(mb.slice(at..at + take));
                at += take;
                fill += take;
                if fill == cfg.step_batch {
                    steps.push(std::mem::take(&mut cur));
                    fill = 0;
                }
            }
        }
    }
    if !cur.is_empty() {
        steps.push(cur);
    }
    Ok(steps)
}

fn io(e: impl std::fmt::Display) -> PretrainError {
    PretrainError::Io(e.to_string())
}

/// Pretrains `init` on `D` supervised edges of the training split, validating
/// on the holdout once per epoch. With `out_dir`, writes `best.bffc` at the
/// end and `epoch{n}.bffc` at the configured cadence.
pub fn pretrain(
    g: &HetGraph,
    cfg: &TrainConfig,
    init: ModelParams,
    split: &NodeSplit,
    out_dir: Option<&Path>,
) -> Result<PretrainOutcome, PretrainError> {
    cfg.validate()?;
    split.validate(g)?;
    init.config().check_graph(g)?;
    let data = load_training_data(g, &split.train, cfg)?;
    let val = validation_batches(g, split, cfg)?;
    let spe = steps_per_epoch(data.size, cfg.step_batch);
    let schedule = lr_schedule(spe * cfg.epochs, cfg.lr, cfg.warmup_frac)?;
    let adam = AdamConfig {
        lr: cfg.lr,
        weight_decay: cfg.weight_decay,
        ..AdamConfig::default()
    };
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(io)?;
    }

    let mut params = init;
    let mut best = params.clone();
    let mut opt = OptimizerState::new();
    let mut trace = LossTrace::new();
    let mut step = 0;
    let mut since_best = 0;
    let mut epochs = 0;
    let mut stopped_early = false;
    for epoch in 1..=cfg.epochs {
        let steps = epoch_steps(g, &data, cfg, epoch)?;
        debug_assert_eq!(steps.len(), spe);
        for chunks in &steps {
            step += 1;
            let (loss, grads) = step_gradients(&params, g, chunks, cfg, sample_seed(cfg.seed, 100, step as u64))?;
            adam_step(params.store_mut(), &grads, &mut opt, &adam, schedule.lr(step))?;
            trace.push_train(step, epoch, loss);
        }
        epochs = epoch;
        let v = validation_loss(&params, g, &val, cfg)?;
        info!("epoch {epoch}: step {step}, val loss {v:.5}");
        if trace.push_val(step, epoch, v) {
            best = params.clone();
            since_best = 0;
        } else {
            since_best += 1;
        }
        if let Some(dir) = out_dir {
            if cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0 {
                save_checkpoint(&params, &dir.join(format!("epoch{epoch}.bffc")))?;
            }
        }
        if cfg.patience > 0 && since_best >= cfg.patience {
            stopped_early = epoch < cfg.epochs;
            break;
        }
    }
    if let Some(dir) = out_dir {
        save_checkpoint(&best, &dir.join("best.bffc"))?;
    }
    Ok(PretrainOutcome {
        best,
        last: params,
        trace,
        steps: step,
        epochs,
        steps_per_epoch: spe,
        stopped_early,
        schedule,
        data,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn epoch_accounting() {
        assert_eq!(steps_per_epoch(1024, 1024), 1);
        assert_eq!(steps_per_epoch(1025, 1024), 2);
        assert_eq!(steps_per_epoch(1, 1024), 1);
    }
}
