use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::PretrainError;
use crate::batching::MiniBatch;
use crate::hetgraph::{EdgeId, HetGraph, MessageView, NodeId};
use crate::model::{encode, link_logits, Context, EncodeOptions, ModelParams};
use crate::numerics::{Tape, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct LossOptions {
    pub mask_ratio: f64,
    /// Picks the masked subset when `mask_ratio < 1`.
    pub mask_seed: u64,
    pub encode: EncodeOptions,
    /// Verify that no masked edge is reachable in the message graph.
    pub check_masking: bool,
}

impl Default for LossOptions {
    fn default() -> Self {
        Self {
            mask_ratio: 1.0,
            mask_seed: 0,
            encode: EncodeOptions::default(),
            check_masking: cfg!(debug_assertions),
        }
    }
}

pub struct LpLoss {
    pub tape: Tape,
    pub loss: Var,
    pub value: f64,
    /// Positives plus negatives.
    pub examples: usize,
    pub masked: Vec<EdgeId>,
}

fn masked_subset(positives: &[EdgeId], ratio: f64, seed: u64) -> Vec<EdgeId> {
    if ratio >= 1.0 {
        return positives.to_vec();
    }
    let k = (ratio * positives.len() as f64).round() as usize;
    let mut pick = positives.to_vec();
    pick.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    pick.truncate(k);
    pick.sort_unstable();
    pick
}

/// Checks that no masked edge is visible from either endpoint.
pub(crate) fn verify_masked(view: &MessageView<'_>, masked: &[EdgeId]) -> Result<(), PretrainError> {
    let g = view.graph();
    for &e in masked {
        let edge = g.edge(e);
        if view.incident_edges(edge.src).chain(view.incident_edges(edge.dst)).any(|x| x == e) {
            return Err(PretrainError::MaskLeak(e));
        }
    }
    Ok(())
}

/// Mean BCE over the minibatch's positives (label 1) and negatives (label 0),
/// scored on embeddings computed with the supervision edges masked out.
pub fn masked_lp_loss(
    params: &ModelParams,
    g: &HetGraph,
    mb: &MiniBatch,
    opts: &LossOptions,
) -> Result<LpLoss, PretrainError> {
    if mb.positives.is_empty() {
        return Err(PretrainError::EmptyMiniBatch);
    }
    let masked = masked_subset(&mb.positives, opts.mask_ratio, opts.mask_seed);
    let view = mb
        .view_masking(g, &masked)
        .with_direction(params.config().neighborhood.direction);
    if opts.check_masking {
        verify_masked(&view, &masked)?;
    }

    let mut pairs: Vec<(NodeId, NodeId)> = mb
        .positives
        .iter()
        .map(|&e| {
            let e = g.edge(e);
            (e.src, e.dst)
        })
        .collect();
    pairs.extend(mb.negatives.iter().copied());
    let mut labels = vec![1.0; mb.positives.len()];
    labels.resize(pairs.len(), 0.0);

    let targets = mb.endpoints(g);
    let slot: HashMap<NodeId, usize> = targets.iter().enumerate().map(|(i, &v)| (v, i)).collect();
    let mut tape = Tape::new();
    let enc = encode(params, &mut tape, &[Context { view, targets }], &opts.encode)?;
    let hu = tape.gather_rows(enc.h, pairs.iter().map(|p| slot[&p.0]).collect());
    let hv = tape.gather_rows(enc.h, pairs.iter().map(|p| slot[&p.1]).collect());
    let logits = link_logits(params, &mut tape, hu, hv, &vec![mb.etype; pairs.len()])?;
    let loss = tape.bce_with_logits(logits, labels);
    let value = tape.value(loss).get(0, 0);
    if !value.is_finite() {
        return Err(PretrainError::NonFiniteLoss(value));
    }
    Ok(LpLoss {
        tape,
        loss,
        value,
        examples: pairs.len(),
        masked,
    })
}
