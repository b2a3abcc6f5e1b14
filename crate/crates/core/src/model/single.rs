//! Per-node entry points over explicit neighbor representations.
//!
//! These share the layer code used by [`encode`](super::encode) and exist
//! mainly so each component can be checked against a direct transcription.

use super::forward::{block_public, phi, taa_layer, tca_layer, SetPlan};
use super::{ModelError, ModelParams};
use crate::hetgraph::{EdgeTypeId, HetGraph, NodeId, NodeTypeId};
use crate::numerics::{Matrix, Tape};

fn check_layer(params: &ModelParams, l: usize) -> Result<(), ModelError> {
    if l >= params.config().layers {
        return Err(ModelError::Layer(l));
    }
    Ok(())
}

fn check_width(params: &ModelParams, x: &[f64]) -> Result<(), ModelError> {
    let d = params.config().d_model;
    if x.len() != d {
        return Err(ModelError::FeatureDim { expected: d, got: x.len() });
    }
    Ok(())
}

/// `E_τ(v) x_v`.
pub fn embed_input(params: &ModelParams, g: &HetGraph, v: NodeId) -> Result<Vec<f64>, ModelError> {
    g.check_node(v)?;
    let cfg = params.config();
    let t = g.node_type(v).index();
    if t >= cfg.n_node_types() {
        return Err(ModelError::IncompatibleTypes(format!("node type #{t}")));
    }
    let x = g.features(v);
    let e = params.store().get(params.ids.embed[t]);
    if x.len() != e.rows() {
        return Err(ModelError::FeatureDim { expected: e.rows(), got: x.len() });
    }
    Ok(Matrix::row_vector(x).matmul(e).into_vec())
}

/// TCA output at one node given its own representation and, per edge set,
/// the representations of its neighbors in that set. The flag is true when
/// every set is empty, in which case the output is zero.
pub fn tca_forward(
    params: &ModelParams,
    l: usize,
    h_v: &[f64],
    per_set: &[Vec<Vec<f64>>],
) -> Result<(Vec<f64>, bool), ModelError> {
    check_layer(params, l)?;
    check_width(params, h_v)?;
    let cfg = params.config();
    if per_set.len() != cfg.edge_sets.len() {
        return Err(ModelError::Config(format!(
            "expected {} edge sets, got {}",
            cfg.edge_sets.len(),
            per_set.len()
        )));
    }
    let mut rows = vec![h_v.to_vec()];
    let mut plans = Vec::with_capacity(per_set.len());
    for set in per_set {
        let mut list = Vec::with_capacity(set.len());
        for x in set {
            check_width(params, x)?;
            list.push(rows.len());
            rows.push(x.clone());
        }
        plans.push(SetPlan::build(&[list]));
    }
    let isolated = per_set.iter().all(|s| s.is_empty());
    let mut tape = Tape::new();
    let h = tape.constant(Matrix::from_rows(&rows)?);
    let out = tca_layer(params, &params.ids.layers[l], &mut tape, h, 1, &plans);
    Ok((tape.value(out).row(0).to_vec(), isolated))
}

/// TAA output at one node. `nbrs` is the sampled neighborhood; the node
/// itself is prepended when the config includes self.
pub fn taa_forward(
    params: &ModelParams,
    l: usize,
    v: (NodeTypeId, &[f64]),
    nbrs: &[(NodeTypeId, Vec<f64>)],
) -> Result<Vec<f64>, ModelError> {
    check_layer(params, l)?;
    let cfg = params.config();
    let mut rows = vec![v.1.to_vec()];
    let mut types = vec![v.0.index()];
    for (t, x) in nbrs {
        rows.push(x.clone());
        types.push(t.index());
    }
    for (t, x) in types.iter().zip(&rows) {
        check_width(params, x)?;
        if *t >= cfg.n_node_types() {
            return Err(ModelError::IncompatibleTypes(format!("node type #{t}")));
        }
    }
    let mut list: Vec<usize> = (1..rows.len()).collect();
    if cfg.neighborhood.taa_include_self {
        list.insert(0, 0);
    }
    let mut tape = Tape::new();
    let h = tape.constant(Matrix::from_rows(&rows)?);
    let out = taa_layer(params, &params.ids.layers[l], &mut tape, h, &types, 1, &[list]);
    Ok(tape.value(out).row(0).to_vec())
}

/// `Φ([h_tca ; h_taa])`.
pub fn combine_phi(params: &ModelParams, l: usize, h_tca: &[f64], h_taa: &[f64]) -> Result<Vec<f64>, ModelError> {
    check_layer(params, l)?;
    check_width(params, h_tca)?;
    check_width(params, h_taa)?;
    let mut tape = Tape::new();
    let a = tape.constant(Matrix::row_vector(h_tca));
    let b = tape.constant(Matrix::row_vector(h_taa));
    let out = phi(&params.ids.layers[l], params, &mut tape, a, b);
    Ok(tape.value(out).row(0).to_vec())
}

/// Residual block on a batch: row `i` of the result is
/// `LN(z + FFN(z))` with `z = LN(h_i + mixed_i)`. No dropout.
pub fn block_forward(params: &ModelParams, l: usize, h: &Matrix, mixed: &Matrix) -> Result<Matrix, ModelError> {
    check_layer(params, l)?;
    let d = params.config().d_model;
    for m in [h, mixed] {
        if m.cols() != d || m.rows() != h.rows() {
            return Err(ModelError::FeatureDim { expected: d, got: m.cols() });
        }
    }
    let mut tape = Tape::new();
    let hv = tape.constant(h.clone());
    let mv = tape.constant(mixed.clone());
    let (_, out) = block_public(params, l, &mut tape, hv, mv);
    Ok(tape.value(out).clone())
}

/// Link logit for one pair.
pub fn link_score(params: &ModelParams, h_u: &[f64], h_v: &[f64], etype: EdgeTypeId) -> Result<f64, ModelError> {
    check_width(params, h_u)?;
    check_width(params, h_v)?;
    let mut tape = Tape::new();
    let a = tape.constant(Matrix::row_vector(h_u));
    let b = tape.constant(Matrix::row_vector(h_v));
    let out = super::link_logits(params, &mut tape, a, b, &[etype])?;
    Ok(tape.value(out).get(0, 0))
}
