//! Batched forward pass on a gradient tape.
//!
//! Several contexts (each a message view plus target nodes) are encoded in a
//! single pass. Every (context, node) pair needed by any layer gets one row.
//! Rows are ordered by the deepest layer that needs them, so the rows that
//! layer `l` must produce are always a prefix of the rows it reads.

use std::collections::HashMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::params::LayerIds;
use super::{AblationMode, ModelError, ModelParams};
use crate::hetgraph::{EdgeTypeId, MessageView, NodeId};
use crate::numerics::{AttentionPlan, Matrix, Tape, Var};

/// A message view and the nodes whose final embeddings are wanted.
#[derive(Debug, Clone)]
pub struct Context<'g> {
    pub view: MessageView<'g>,
    pub targets: Vec<NodeId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodeOptions {
    pub mode: AblationMode,
    /// Seed of the TAA neighborhood sampler.
    pub seed: u64,
    /// Enables dropout with masks drawn from this seed.
    pub dropout_seed: Option<u64>,
    /// Record per-layer intermediate values.
    pub trace: bool,
}

impl Default for EncodeOptions {
    fn default() -> Self {
        Self {
            mode: AblationMode::Full,
            seed: 0,
            dropout_seed: None,
            trace: false,
        }
    }
}

/// Intermediate values of one layer, over that layer's query rows.
#[derive(Debug, Clone)]
pub struct LayerTrace {
    pub tca: Var,
    pub taa: Var,
    /// Combined attention output before the residual.
    pub mixed: Var,
    pub z: Var,
    pub out: Var,
    /// Query rows whose TCA edge sets were all empty.
    pub tca_isolated: Vec<bool>,
}

#[derive(Debug, Clone)]
pub struct Encoded {
    /// Final embeddings; row `offsets[c] + i` is target `i` of context `c`.
    pub h: Var,
    pub offsets: Vec<usize>,
    /// `(context, node)` for every internal row.
    pub rows: Vec<(usize, NodeId)>,
    /// Row index of each target, in output order.
    pub target_rows: Vec<usize>,
    /// Input embeddings of every row.
    pub input: Var,
    pub traces: Vec<LayerTrace>,
}

struct Neighborhood {
    sets: Vec<Vec<NodeId>>,
    taa: Vec<NodeId>,
}

struct Dropout {
    rng: ChaCha8Rng,
    p: f64,
}

impl Dropout {
    fn apply(&mut self, tape: &mut Tape, x: Var) -> Var {
        let (r, c) = tape.value(x).shape();
        let keep = 1.0 / (1.0 - self.p);
        let data = (0..r * c)
            .map(|_| if self.rng.random::<f64>() < self.p { 0.0 } else { keep })
            .collect();
        let mask = tape.constant(Matrix::from_vec(r, c, data).expect("sized"));
        tape.mul(x, mask)
    }
}

fn prefix(tape: &mut Tape, h: Var, n: usize) -> Var {
    if tape.value(h).rows() == n {
        h
    } else {
        tape.gather_rows(h, (0..n).collect())
    }
}

/// Encodes every context's targets on `tape`.
pub fn encode(
    params: &ModelParams,
    tape: &mut Tape,
    contexts: &[Context<'_>],
    opts: &EncodeOptions,
) -> Result<Encoded, ModelError> {
    let cfg = params.config();
    let nb = &cfg.neighborhood;
    let n_layers = cfg.layers;
    let d = cfg.d_model;
    for ctx in contexts {
        cfg.check_graph(ctx.view.graph())?;
    }

    let mut rows: Vec<(usize, NodeId)> = Vec::new();
    let mut index: HashMap<(usize, NodeId), usize> = HashMap::new();
    let mut add = |rows: &mut Vec<(usize, NodeId)>, key: (usize, NodeId)| -> usize {
        *index.entry(key).or_insert_with(|| {
            rows.push(key);
            rows.len() - 1
        })
    };
    let mut offsets = Vec::with_capacity(contexts.len() + 1);
    let mut target_rows = Vec::new();
    for (c, ctx) in contexts.iter().enumerate() {
        offsets.push(target_rows.len());
        for &t in &ctx.targets {
            ctx.view.graph().check_node(t)?;
            target_rows.push(add(&mut rows, (c, t)));
        }
    }
    offsets.push(target_rows.len());

    // n[l] = number of rows holding h^(l).
    let mut n = vec![0usize; n_layers + 1];
    n[n_layers] = rows.len();
    let mut hoods: Vec<Neighborhood> = Vec::new();
    for l in (0..n_layers).rev() {
        for r in hoods.len()..n[l + 1] {
            let (c, v) = rows[r];
            let view = &contexts[c].view;
            let sets = cfg
                .edge_sets
                .iter()
                .map(|s| {
                    // Types the model knows but this graph lacks have no edges.
                    let present: Vec<EdgeTypeId> =
                        s.iter().copied().filter(|t| t.index() < view.graph().n_edge_types()).collect();
                    view.neighbors_by_set(v, &present)
                })
                .collect::<Result<Vec<_>, _>>()?;
            let taa = if opts.mode == AblationMode::TcaOnly {
                Vec::new()
            } else {
                view.sample_taa_neighborhood(v, nb.taa_hops, nb.taa_cap, opts.seed)?
            };
            for u in sets.iter().flatten().chain(&taa) {
                add(&mut rows, (c, *u));
            }
            hoods.push(Neighborhood { sets, taa });
        }
        n[l] = rows.len();
    }

    let input = embed_rows(params, tape, contexts, &rows)?;
    let mut dropout = match opts.dropout_seed {
        Some(s) if cfg.dropout > 0.0 => Some(Dropout {
            rng: ChaCha8Rng::seed_from_u64(s),
            p: cfg.dropout,
        }),
        _ => None,
    };

    let mut h = input;
    let mut traces = Vec::new();
    for l in 0..n_layers {
        let ids = &params.ids.layers[l];
        let nq = n[l + 1];
        let row_of = |key: (usize, NodeId)| index[&key];

        let (tca, isolated) = if opts.mode == AblationMode::TaaOnly {
            (tape.constant(Matrix::zeros(nq, d)), vec![false; nq])
        } else {
            let mut set_plans = Vec::with_capacity(cfg.edge_sets.len());
            let mut any = vec![false; nq];
            for s in 0..cfg.edge_sets.len() {
                let lists: Vec<Vec<usize>> = (0..nq)
                    .map(|q| {
                        let c = rows[q].0;
                        hoods[q].sets[s].iter().map(|&u| row_of((c, u))).collect()
                    })
                    .collect();
                for (q, list) in lists.iter().enumerate() {
                    any[q] |= !list.is_empty();
                }
                set_plans.push(SetPlan::build(&lists));
            }
            let out = tca_layer(params, ids, tape, h, nq, &set_plans);
            (out, any.into_iter().map(|a| !a).collect())
        };

        let taa = if opts.mode == AblationMode::TcaOnly {
            tape.constant(Matrix::zeros(nq, d))
        } else {
            let lists: Vec<Vec<usize>> = (0..nq)
                .map(|q| {
                    let c = rows[q].0;
                    let mut list = Vec::with_capacity(hoods[q].taa.len() + 1);
                    if nb.taa_include_self {
                        list.push(q);
                    }
                    list.extend(hoods[q].taa.iter().map(|&u| row_of((c, u))));
                    list
                })
                .collect();
            let types: Vec<usize> = rows[..n[l]]
                .iter()
                .map(|&(c, v)| contexts[c].view.graph().node_type(v).index())
                .collect();
            taa_layer(params, ids, tape, h, &types, nq, &lists)
        };

        let mut mixed = match opts.mode {
            AblationMode::Full => phi(ids, params, tape, tca, taa),
            AblationMode::TcaOnly => tca,
            AblationMode::TaaOnly => taa,
        };
        let pre_dropout = mixed;
        if let Some(dr) = dropout.as_mut() {
            mixed = dr.apply(tape, mixed);
        }
        let hp = prefix(tape, h, nq);
        let (z, out) = block(params, ids, tape, hp, mixed, dropout.as_mut());
        if opts.trace {
            traces.push(LayerTrace {
                tca,
                taa,
                mixed: pre_dropout,
                z,
                out,
                tca_isolated: isolated,
            });
        }
        h = out;
    }

    let identity = target_rows.iter().enumerate().all(|(i, &r)| i == r) && target_rows.len() == n[n_layers];
    let h = if identity {
        h
    } else {
        tape.gather_rows(h, target_rows.clone())
    };
    Ok(Encoded {
        h,
        offsets,
        rows,
        target_rows,
        input,
        traces,
    })
}

fn embed_rows(
    params: &ModelParams,
    tape: &mut Tape,
    contexts: &[Context<'_>],
    rows: &[(usize, NodeId)],
) -> Result<Var, ModelError> {
    let cfg = params.config();
    let nt = cfg.n_node_types();
    let mut by_type: Vec<Vec<usize>> = vec![Vec::new(); nt];
    for (r, &(c, v)) in rows.iter().enumerate() {
        let t = contexts[c].view.graph().node_type(v).index();
        if t >= nt {
            return Err(ModelError::IncompatibleTypes(format!(
                "node type #{t} is unknown to the model; extend the model first"
            )));
        }
        by_type[t].push(r);
    }
    let mut parts = Vec::new();
    for (t, rs) in by_type.into_iter().enumerate() {
        if rs.is_empty() {
            continue;
        }
        let dim = cfg.registry.node_types()[t].dim;
        let mut data = Vec::with_capacity(rs.len() * dim);
        for &r in &rs {
            let (c, v) = rows[r];
            let x = contexts[c].view.graph().features(v);
            if x.len() != dim {
                return Err(ModelError::FeatureDim {
                    expected: dim,
                    got: x.len(),
                });
            }
            data.extend_from_slice(x);
        }
        let xm = tape.constant(Matrix::from_vec(rs.len(), dim, data).expect("sized"));
        let id = params.ids.embed[t];
        let e = tape.param(id, params.store().get(id));
        parts.push((tape.matmul(xm, e), rs));
    }
    Ok(tape.scatter_rows(rows.len(), cfg.d_model, parts))
}

/// Per edge-set attention pattern restricted to participating rows.
pub(crate) struct SetPlan {
    /// Query rows with a nonempty segment.
    queries: Vec<usize>,
    /// Rows appearing as keys, sorted.
    keys: Vec<usize>,
    /// Segments indexing into `keys`.
    plan: Arc<AttentionPlan>,
}

impl SetPlan {
    pub(crate) fn build(lists: &[Vec<usize>]) -> SetPlan {
        let mut keys: Vec<usize> = lists.iter().flatten().copied().collect();
        keys.sort_unstable();
        keys.dedup();
        let pos: HashMap<usize, usize> = keys.iter().enumerate().map(|(i, &k)| (k, i)).collect();
        let mut queries = Vec::new();
        let mut segs = Vec::new();
        for (q, list) in lists.iter().enumerate() {
            if list.is_empty() {
                continue;
            }
            queries.push(q);
            segs.push(list.iter().map(|k| pos[k]).collect::<Vec<_>>());
        }
        SetPlan {
            queries,
            keys,
            plan: Arc::new(AttentionPlan::from_lists(&segs)),
        }
    }
}

fn p(params: &ModelParams, tape: &mut Tape, id: crate::numerics::ParamId) -> Var {
    tape.param(id, params.store().get(id))
}

/// Sum over nonempty edge sets of per-set attention, then the output projection.
pub(crate) fn tca_layer(
    params: &ModelParams,
    ids: &LayerIds,
    tape: &mut Tape,
    h: Var,
    nq: usize,
    sets: &[SetPlan],
) -> Var {
    let cfg = params.config();
    let d = cfg.d_model;
    let mut parts = Vec::new();
    for (s, sp) in sets.iter().enumerate() {
        if sp.queries.is_empty() {
            continue;
        }
        let [wq, wk, wv] = ids.sets[s];
        let hq = tape.gather_rows(h, sp.queries.clone());
        let hk = tape.gather_rows(h, sp.keys.clone());
        let (wq, wk, wv) = (p(params, tape, wq), p(params, tape, wk), p(params, tape, wv));
        let q = tape.matmul(hq, wq);
        let k = tape.matmul(hk, wk);
        let v = tape.matmul(hk, wv);
        let a = tape.attention(q, k, v, cfg.heads, sp.plan.clone());
        parts.push(tape.scatter_rows(nq, d, vec![(a, sp.queries.clone())]));
    }
    let mut acc = match parts.split_first() {
        None => return tape.constant(Matrix::zeros(nq, d)),
        Some((first, rest)) => rest.iter().fold(*first, |a, &b| tape.add(a, b)),
    };
    let wo = p(params, tape, ids.tca_out);
    acc = tape.matmul(acc, wo);
    acc
}

/// Type-specific projection, then shared attention over the sampled lists.
pub(crate) fn taa_layer(
    params: &ModelParams,
    ids: &LayerIds,
    tape: &mut Tape,
    h: Var,
    row_types: &[usize],
    nq: usize,
    lists: &[Vec<usize>],
) -> Var {
    let cfg = params.config();
    let d = cfg.d_model;
    // Rows needed: every query plus every key; queries come first.
    let mut needed: Vec<usize> = (0..nq).chain(lists.iter().flatten().copied()).collect();
    needed.sort_unstable();
    needed.dedup();
    let pos: HashMap<usize, usize> = needed.iter().enumerate().map(|(i, &r)| (r, i)).collect();

    let mut by_type: Vec<Vec<usize>> = vec![Vec::new(); cfg.n_node_types()];
    for (i, &r) in needed.iter().enumerate() {
        by_type[row_types[r]].push(i);
    }
    let mut parts = Vec::new();
    for (t, idx) in by_type.into_iter().enumerate() {
        if idx.is_empty() {
            continue;
        }
        let src: Vec<usize> = idx.iter().map(|&i| needed[i]).collect();
        let ht = tape.gather_rows(h, src);
        let wt = p(params, tape, ids.taa_type[t]);
        parts.push((tape.matmul(ht, wt), idx));
    }
    let hat = tape.scatter_rows(needed.len(), d, parts);
    let hq = prefix(tape, hat, nq);
    let (wq, wk, wv) = (
        p(params, tape, ids.taa_q),
        p(params, tape, ids.taa_k),
        p(params, tape, ids.taa_v),
    );
    let q = tape.matmul(hq, wq);
    let k = tape.matmul(hat, wk);
    let v = tape.matmul(hat, wv);
    let segs: Vec<Vec<usize>> = lists
        .iter()
        .map(|l| l.iter().map(|r| pos[r]).collect())
        .collect();
    let a = tape.attention(q, k, v, cfg.heads, Arc::new(AttentionPlan::from_lists(&segs)));
    let wo = p(params, tape, ids.taa_out);
    tape.matmul(a, wo)
}

/// Two-layer ReLU combiner on `[tca ; taa]`.
pub(crate) fn phi(ids: &LayerIds, params: &ModelParams, tape: &mut Tape, tca: Var, taa: Var) -> Var {
    let cat = tape.concat_cols(&[tca, taa]);
    let (w1, b1, w2, b2) = (
        p(params, tape, ids.phi_w1),
        p(params, tape, ids.phi_b1),
        p(params, tape, ids.phi_w2),
        p(params, tape, ids.phi_b2),
    );
    let x = tape.matmul(cat, w1);
    let x = tape.add_row(x, b1);
    let x = tape.relu(x);
    let x = tape.matmul(x, w2);
    tape.add_row(x, b2)
}

/// `z = LN(h + mixed)`, `h' = LN(z + FFN(z))`. Returns `(z, h')`.
fn block(
    params: &ModelParams,
    ids: &LayerIds,
    tape: &mut Tape,
    h: Var,
    mixed: Var,
    dropout: Option<&mut Dropout>,
) -> (Var, Var) {
    let s = tape.add(h, mixed);
    let (g1, b1) = (p(params, tape, ids.ln1_g), p(params, tape, ids.ln1_b));
    let z = tape.layer_norm(s, g1, b1);
    let (w1, c1, w2, c2) = (
        p(params, tape, ids.ffn_w1),
        p(params, tape, ids.ffn_b1),
        p(params, tape, ids.ffn_w2),
        p(params, tape, ids.ffn_b2),
    );
    let f = tape.matmul(z, w1);
    let f = tape.add_row(f, c1);
    let mut f = tape.relu(f);
    if let Some(dr) = dropout {
        f = dr.apply(tape, f);
    }
    let f = tape.matmul(f, w2);
    let f = tape.add_row(f, c2);
    let s2 = tape.add(z, f);
    let (g2, b2) = (p(params, tape, ids.ln2_g), p(params, tape, ids.ln2_b));
    (z, tape.layer_norm(s2, g2, b2))
}

pub(crate) fn block_public(params: &ModelParams, l: usize, tape: &mut Tape, h: Var, mixed: Var) -> (Var, Var) {
    block(params, &params.ids.layers[l], tape, h, mixed, None)
}

/// Link logits `MLP([h_u ; h_v ; h_u * h_v]) + b_etype`, one row per pair.
pub fn link_logits(
    params: &ModelParams,
    tape: &mut Tape,
    hu: Var,
    hv: Var,
    etypes: &[EdgeTypeId],
) -> Result<Var, ModelError> {
    let head = params.ids.head.as_ref().ok_or(ModelError::NoHead)?;
    let mut bias_rows = Vec::with_capacity(etypes.len());
    for &t in etypes {
        params.head_bias_id(t)?;
        bias_rows.push(t.index());
    }
    let prod = tape.mul(hu, hv);
    let x = tape.concat_cols(&[hu, hv, prod]);
    let (w1, b1, w2) = (p(params, tape, head.w1), p(params, tape, head.b1), p(params, tape, head.w2));
    let x = tape.matmul(x, w1);
    let x = tape.add_row(x, b1);
    let x = tape.relu(x);
    let logits = tape.matmul(x, w2);
    let biases: Vec<Var> = head.bias.clone().into_iter().map(|id| p(params, tape, id)).collect();
    let column = tape.concat_rows(&biases);
    let per_pair = tape.gather_rows(column, bias_rows);
    Ok(tape.add(logits, per_pair))
}
