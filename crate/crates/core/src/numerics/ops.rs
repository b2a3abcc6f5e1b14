//! Forward kernels shared by the tape and by direct (tape-free) evaluation.

use super::{Matrix, NumericsError};

/// Layer-norm epsilon used throughout the model.
pub const LN_EPS: f64 = 1e-5;

/// Softmax restricted to the indices in `mask`; entries off the mask are zero.
///
/// Uses max-subtraction, so adding a constant to every masked score leaves the
/// result unchanged.
pub fn masked_softmax(scores: &[f64], mask: &[usize]) -> Result<Vec<f64>, NumericsError> {
    if mask.is_empty() {
        return Err(NumericsError::EmptyMask);
    }
    let max = mask
        .iter()
        .map(|&i| scores[i])
        .fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(NumericsError::NonFinite {
            op: "masked_softmax",
        });
    }
    let mut out = vec![0.0; scores.len()];
    let mut total = 0.0;
    for &i in mask {
        let e = (scores[i] - max).exp();
        out[i] = e;
        total += e;
    }
    for &i in mask {
        out[i] /= total;
    }
    Ok(out)
}

/// Softmax over a contiguous slice, in place, with max-subtraction.
pub(crate) fn softmax_in_place(xs: &mut [f64]) {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in xs.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in xs.iter_mut() {
        *x /= total;
    }
}

/// Layer normalization of one vector: `gain * (x - mean) / sqrt(var + eps) + bias`.
///
/// Uses the biased (population) variance. A constant input maps to `bias`.
pub fn layer_norm(x: &[f64], gain: &[f64], bias: &[f64], eps: f64) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    layer_norm_into(x, gain, bias, eps, &mut out);
    out
}

/// Writes the normalized row into `out` and returns `(mean, 1/sqrt(var+eps))`.
pub(crate) fn layer_norm_into(
    x: &[f64],
    gain: &[f64],
    bias: &[f64],
    eps: f64,
    out: &mut [f64],
) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv_std = 1.0 / (var + eps).sqrt();
    for i in 0..x.len() {
        out[i] = gain[i] * (x[i] - mean) * inv_std + bias[i];
    }
    (mean, inv_std)
}

/// ReLU with the convention `relu'(0) = 0`.
#[inline]
pub fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

/// Sparse attention pattern: for query `i`, the keys are
/// `keys[offsets[i]..offsets[i + 1]]`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AttentionPlan {
    pub offsets: Vec<usize>,
    pub keys: Vec<usize>,
}

impl AttentionPlan {
    pub fn from_lists(lists: &[Vec<usize>]) -> Self {
        let mut offsets = Vec::with_capacity(lists.len() + 1);
        let mut keys = Vec::new();
        offsets.push(0);
        for l in lists {
            keys.extend_from_slice(l);
            offsets.push(keys.len());
        }
        Self { offsets, keys }
    }

    pub fn n_queries(&self) -> usize {
        self.offsets.len().saturating_sub(1)
    }

    pub fn segment(&self, q: usize) -> &[usize] {
        &self.keys[self.offsets[q]..self.offsets[q + 1]]
    }
}

/// Multi-head scaled dot-product attention over a sparse pattern.
///
/// `q` is `n_q x (heads*d_h)`, `k` and `v` are `n_k x (heads*d_h)`. Queries with
/// an empty segment produce a zero row. Returns the output and the attention
/// weights laid out as `[edge][head]`.
///
/// The weighted sum is evaluated relative to the segment's first value,
/// `v_0 + sum_i a_i (v_i - v_0)`, which equals `sum_i a_i v_i` because the
/// weights sum to one. A segment whose values are all identical then returns
/// that value bit-for-bit, independent of the segment length.
pub fn sparse_attention(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    heads: usize,
    plan: &AttentionPlan,
) -> (Matrix, Vec<f64>) {
    let width = q.cols();
    debug_assert_eq!(k.cols(), width);
    debug_assert_eq!(v.cols(), width);
    debug_assert_eq!(plan.n_queries(), q.rows());
    let dh = width / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut out = Matrix::zeros(q.rows(), width);
    let mut weights = vec![0.0; plan.keys.len() * heads];
    let mut buf = Vec::new();
    for i in 0..q.rows() {
        let seg = plan.segment(i);
        if seg.is_empty() {
            continue;
        }
        let base = plan.offsets[i];
        let qi = q.row(i);
        for h in 0..heads {
            let cols = h * dh..(h + 1) * dh;
            buf.clear();
            for &j in seg {
                let kj = &k.row(j)[cols.clone()];
                let dot: f64 = qi[cols.clone()].iter().zip(kj).map(|(a, b)| a * b).sum();
                buf.push(dot * scale);
            }
            softmax_in_place(&mut buf);
            for (e, w) in buf.iter().enumerate() {
                weights[(base + e) * heads + h] = *w;
            }
            let anchor = &v.row(seg[0])[cols.clone()];
            let orow = &mut out.row_mut(i)[cols.clone()];
            orow.copy_from_slice(anchor);
            for (e, &j) in seg.iter().enumerate().skip(1) {
                let w = buf[e];
                let vj = &v.row(j)[cols.clone()];
                for c in 0..dh {
                    orow[c] += w * (vj[c] - anchor[c]);
                }
            }
        }
    }
    (out, weights)
}
