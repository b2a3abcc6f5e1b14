use std::collections::VecDeque;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::hetgraph::{HetGraph, MessageView, NodeId};
use crate::model::{encode, AblationMode, Context, EncodeOptions, ModelParams};
use crate::numerics::{Matrix, Tape};
use crate::syngen::Target;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedOptions {
    /// Ego-graph radius.
    pub k: usize,
    pub seed: u64,
    pub mode: AblationMode,
    /// Contexts per forward pass.
    pub chunk: usize,
}

impl Default for EmbedOptions {
    fn default() -> Self {
        Self {
            k: 2,
            seed: 0,
            mode: AblationMode::Full,
            chunk: 128,
        }
    }
}

/// Nodes within `k` hops of any root in `view`, sorted.
pub(crate) fn ball(view: &MessageView<'_>, roots: &[NodeId], k: usize) -> Vec<NodeId> {
    let mut dist = std::collections::HashMap::new();
    let mut queue = VecDeque::new();
    for &r in roots {
        if dist.insert(r, 0usize).is_none() {
            queue.push_back(r);
        }
    }
    while let Some(u) = queue.pop_front() {
        let d = dist[&u];
        if d == k {
            continue;
        }
        for w in view.neighbors(u) {
            dist.entry(w).or_insert_with(|| {
                queue.push_back(w);
                d + 1
            });
        }
    }
    let mut out: Vec<NodeId> = dist.into_keys().collect();
    out.sort_unstable();
    out
}

/// Encodes each group of roots on its own `k`-hop context (the union of
/// the roots' balls in `base`) and concatenates the roots' embeddings.
pub(crate) fn embed_groups(
    params: &ModelParams,
    base: &MessageView<'_>,
    groups: &[Vec<NodeId>],
    opts: &EmbedOptions,
) -> Result<Matrix, EvalError> {
    let d = params.config().d_model;
    let width = groups.first().map_or(0, |g| g.len());
    if groups.iter().any(|g| g.len() != width) {
        return Err(EvalError::Config("targets mix levels".into()));
    }
    let base = base.clone().with_direction(params.config().neighborhood.direction);
    let enc_opts = EncodeOptions {
        mode: opts.mode,
        seed: opts.seed,
        dropout_seed: None,
        trace: false,
    };
    let parts: Vec<Vec<f64>> = groups
        .par_chunks(opts.chunk.max(1))
        .map(|chunk| {
            let contexts: Vec<Context<'_>> = chunk
                .iter()
                .map(|roots| Context {
                    view: base.clone().with_members(&ball(&base, roots, opts.k)),
                    targets: roots.clone(),
                })
                .collect();
            let mut tape = Tape::new();
            let enc = encode(params, &mut tape, &contexts, &enc_opts)?;
            Ok(tape.value(enc.h).as_slice().to_vec())
        })
        .collect::<Result<_, EvalError>>()?;
    let data: Vec<f64> = parts.into_iter().flatten().collect();
    Ok(Matrix::from_vec(groups.len(), width * d, data)?)
}

/// Final-layer embeddings of frozen parameters on `k`-hop ego contexts.
/// Edge targets give `[h_u; h_v]`.
pub fn embed_frozen(
    params: &ModelParams,
    g: &HetGraph,
    targets: &[Target],
    opts: &EmbedOptions,
) -> Result<Matrix, EvalError> {
    let groups: Vec<Vec<NodeId>> = targets
        .iter()
        .map(|t| match *t {
            Target::Node(v) => {
                g.check_node(v)?;
                Ok(vec![v])
            }
            Target::Edge(e) => {
                if e >= g.n_edges() {
                    return Err(crate::hetgraph::GraphError::UnknownEdge(e).into());
                }
                let ed = g.edge(e);
                Ok(vec![ed.src, ed.dst])
            }
        })
        .collect::<Result<_, EvalError>>()?;
    embed_groups(params, &g.view(), &groups, opts)
}

/// Input features zero-padded to the widest node type, plus a type one-hot.
pub fn raw_features(g: &HetGraph, targets: &[Target]) -> Matrix {
    let reg = g.registry();
    let w = reg.node_types().iter().map(|s| s.dim).max().unwrap_or(0) + reg.n_node_types();
    let row = |v: NodeId| {
        let mut r = vec![0.0; w];
        r[..g.features(v).len()].copy_from_slice(g.features(v));
        r[w - reg.n_node_types() + g.node_type(v).index()] = 1.0;
        r
    };
    let rows: Vec<Vec<f64>> = targets
        .iter()
        .map(|t| match *t {
            Target::Node(v) => row(v),
            Target::Edge(e) => {
                let ed = g.edge(e);
                let mut r = row(ed.src);
                r.extend(row(ed.dst));
                r
            }
        })
        .collect();
    if rows.is_empty() {
        return Matrix::zeros(0, w);
    }
    Matrix::from_rows(&rows).expect("uniform width")
}
