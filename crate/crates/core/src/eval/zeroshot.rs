use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::embed::{embed_groups, EmbedOptions};
use super::metrics::{class_rate, prauc};
use super::EvalError;
use crate::hetgraph::{EdgeId, EdgeTypeId, HetGraph, NodeId};
use crate::model::{link_logits, ModelParams};
use crate::numerics::{Matrix, Tape};
use crate::syngen::TaskLevel;

/// Candidate links with 0/1 existence labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkTask {
    pub pairs: Vec<(NodeId, NodeId, EdgeTypeId)>,
    pub labels: Vec<f64>,
}

impl LinkTask {
    /// Positives from `edges` plus `neg_per_pos` same-type corruptions of one
    /// endpoint each, drawn from the whole graph.
    pub fn from_edges(g: &HetGraph, edges: &[EdgeId], neg_per_pos: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pairs = Vec::new();
        let mut labels = Vec::new();
        for &e in edges {
            let ed = g.edge(e);
            pairs.push((ed.src, ed.dst, ed.etype));
            labels.push(1.0);
        }
        for &e in edges {
            let ed = g.edge(e);
            for _ in 0..neg_per_pos {
                let flip = rng.random_bool(0.5);
                let old = if flip { ed.src } else { ed.dst };
                let pool = g.nodes_of_type(g.node_type(old));
                let w = pool[rng.random_range(0..pool.len())];
                let p = if flip { (w, ed.dst) } else { (ed.src, w) };
                pairs.push((p.0, p.1, ed.etype));
                labels.push(0.0);
            }
        }
        Self { pairs, labels }
    }

    /// Same pairs with labels permuted.
    pub fn shuffled(&self, seed: u64) -> Self {
        let mut labels = self.labels.clone();
        labels.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        Self {
            pairs: self.pairs.clone(),
            labels,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZeroShotReport {
    pub prauc: f64,
    pub class_rate: f64,
    pub scores: Vec<f64>,
}

/// Scores candidate links with the frozen head. Every existing edge that
/// matches a candidate is hidden from all contexts.
pub fn zero_shot_links(
    params: &ModelParams,
    g: &HetGraph,
    level: TaskLevel,
    task: &LinkTask,
    opts: &EmbedOptions,
) -> Result<ZeroShotReport, EvalError> {
    if level == TaskLevel::Node {
        return Err(EvalError::NodeLevelZeroShot);
    }
    if task.pairs.len() != task.labels.len() {
        return Err(EvalError::LengthMismatch {
            left: task.pairs.len(),
            right: task.labels.len(),
        });
    }
    let mut hidden = Vec::new();
    for &(u, v, t) in &task.pairs {
        g.check_node(u)?;
        g.check_node(v)?;
        if t.index() >= g.n_edge_types() {
            return Err(EvalError::Config(format!("unknown edge type #{}", t.0)));
        }
        hidden.extend(
            g.typed_incidences(u, t)
                .iter()
                .filter(|i| i.nbr == v)
                .map(|i| i.edge),
        );
    }
    let base = g.view().with_masked_edges(hidden);
    let groups: Vec<Vec<NodeId>> = task.pairs.iter().map(|&(u, v, _)| vec![u, v]).collect();
    let h = embed_groups(params, &base, &groups, opts)?;
    let d = params.config().d_model;
    let split = |off: usize| {
        let rows: Vec<f64> = (0..h.rows()).flat_map(|r| h.row(r)[off..off + d].to_vec()).collect();
        Matrix::from_vec(h.rows(), d, rows).expect("sized")
    };
    let mut tape = Tape::new();
    let hu = tape.constant(split(0));
    let hv = tape.constant(split(d));
    let etypes: Vec<EdgeTypeId> = task.pairs.iter().map(|p| p.2).collect();
    let logits = link_logits(params, &mut tape, hu, hv, &etypes)?;
    let scores = tape.value(logits).as_slice().to_vec();
    Ok(ZeroShotReport {
        prauc: prauc(&scores, &task.labels)?,
        class_rate: class_rate(&task.labels),
        scores,
    })
}
