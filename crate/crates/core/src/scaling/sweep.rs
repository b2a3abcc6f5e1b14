use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ScalingError, ScalingObservation};
use crate::hetgraph::HetGraph;
use crate::model::{param_count, ModelConfig, ModelParams};
use crate::pretrain::{pretrain, NodeSplit, PretrainError, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub data_sizes: Vec<usize>,
    pub lrs: Vec<f64>,
    pub seeds: Vec<u64>,
    /// Template for every run; `data_size`, `lr` and `seed` are overwritten.
    pub train: TrainConfig,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            data_sizes: vec![1_000, 3_000, 10_000, 30_000, 100_000],
            lrs: vec![3e-4, 1e-3, 3e-3, 1e-2],
            seeds: vec![0],
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergedRun {
    pub n: f64,
    pub d: f64,
    pub lr: f64,
    pub seed: u64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepOutcome {
    /// One per `(model, data size, seed)` cell in ladder-major order; cells
    /// whose every learning rate diverged are absent.
    pub observations: Vec<ScalingObservation>,
    pub diverged: Vec<DivergedRun>,
}

enum Run {
    Done(f64),
    Diverged(String),
}

fn run_one(
    g: &HetGraph,
    split: &NodeSplit,
    model: &ModelConfig,
    train: &TrainConfig,
    d: usize,
    lr: f64,
    seed: u64,
) -> Result<Run, ScalingError> {
    let cfg = TrainConfig {
        data_size: d,
        lr,
        seed,
        ..train.clone()
    };
    let init = ModelParams::init(model.clone(), seed)?;
    match pretrain(g, &cfg, init, split, None) {
        Ok(out) if out.best_val().is_finite() => Ok(Run::Done(out.best_val())),
        Ok(out) => Ok(Run::Diverged(format!("best validation loss {}", out.best_val()))),
        Err(PretrainError::NonFiniteLoss(v)) => Ok(Run::Diverged(format!("training loss {v}"))),
        Err(e) => Err(e.into()),
    }
}

/// Trains every `(model, D, lr, seed)` combination and keeps, per cell, the
/// lowest best-validation loss over learning rates. Cells run in parallel.
pub fn sweep(
    g: &HetGraph,
    split: &NodeSplit,
    ladder: &[ModelConfig],
    cfg: &SweepConfig,
) -> Result<SweepOutcome, ScalingError> {
    if ladder.is_empty() || cfg.data_sizes.is_empty() || cfg.lrs.is_empty() || cfg.seeds.is_empty() {
        return Err(ScalingError::Config("ladders, learning rates and seeds must be nonempty".into()));
    }
    if cfg.data_sizes.contains(&0) || cfg.lrs.iter().any(|lr| !(lr.is_finite() && *lr > 0.0)) {
        return Err(ScalingError::Config("data sizes and learning rates must be positive".into()));
    }
    let mut cells = Vec::new();
    for m in ladder {
        for &d in &cfg.data_sizes {
            for &seed in &cfg.seeds {
                cells.push((m, d, seed));
            }
        }
    }
    let results: Vec<Result<(Option<ScalingObservation>, Vec<DivergedRun>), ScalingError>> = cells
        .par_iter()
        .map(|&(m, d, seed)| {
            let n = param_count(m).total as f64;
            let mut best: Option<ScalingObservation> = None;
            let mut diverged = Vec::new();
            for &lr in &cfg.lrs {
                match run_one(g, split, m, &cfg.train, d, lr, seed)? {
                    Run::Done(loss) => {
                        if best.as_ref().is_none_or(|b| loss < b.loss) {
                            best = Some(ScalingObservation {
                                n,
                                d: d as f64,
                                lr,
                                seed,
                                loss,
                                flags: String::new(),
                            });
                        }
                    }
                    Run::Diverged(reason) => diverged.push(DivergedRun {
                        n,
                        d: d as f64,
                        lr,
                        seed,
                        reason,
                    }),
                }
            }
            if let Some(b) = best.as_mut() {
                if !diverged.is_empty() {
                    b.flags = "partial_divergence".into();
                }
            }
            Ok((best, diverged))
        })
        .collect();
    let mut out = SweepOutcome {
        observations: Vec::new(),
        diverged: Vec::new(),
    };
    for r in results {
        let (obs, div) = r?;
        out.observations.extend(obs);
        out.diverged.extend(div);
    }
    Ok(out)
}

/// Collapses seeds: one observation per `(N, D)` carrying the median loss
/// (mean of the middle two for even counts), in first-appearance order.
pub fn median_over_seeds(obs: &[ScalingObservation]) -> Vec<ScalingObservation> {
    let mut keys: Vec<(f64, f64)> = Vec::new();
    for o in obs {
        if !keys.contains(&(o.n, o.d)) {
            keys.push((o.n, o.d));
        }
    }
    keys.into_iter()
        .map(|(n, d)| {
            let group: Vec<&ScalingObservation> = obs.iter().filter(|o| o.n == n && o.d == d).collect();
            let mut losses: Vec<f64> = group.iter().map(|o| o.loss).collect();
            losses.sort_by(f64::total_cmp);
            let k = losses.len();
            let loss = if k % 2 == 1 {
                losses[k / 2]
            } else {
                0.5 * (losses[k / 2 - 1] + losses[k / 2])
            };
            let mut flags: Vec<&str> = group.iter().map(|o| o.flags.as_str()).filter(|f| !f.is_empty()).collect();
            flags.sort_unstable();
            flags.dedup();
            ScalingObservation {
                n,
                d,
                lr: group[0].lr,
                seed: group[0].seed,
                loss,
                flags: flags.join(";"),
            }
        })
        .collect()
}
