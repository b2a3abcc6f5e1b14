//! Reverse-mode gradient tape over dense matrices.
//!
//! Every operation evaluates eagerly through the kernels in [`super::ops`] and
//! records what its backward pass needs. Parameters are registered once per
//! tape by [`ParamId`]; [`Tape::backward`] returns gradients for exactly the
//! registered parameters.

use std::collections::HashMap;
use std::sync::Arc;

use super::matrix::gemm;
use super::ops::{self, AttentionPlan};
use super::{Matrix, NumericsError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Identifier of a trainable parameter tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        inv_std: Vec<f64>,
    },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    ScatterRows(Vec<(Var, Vec<usize>)>),
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        plan: Arc<AttentionPlan>,
        weights: Vec<f64>,
    },
    BceWithLogits(Var, Vec<f64>),
    Mse(Var, Vec<f64>),
    SumAll(Var),
}

struct Node {
    value: Matrix,
    op: Op,
}

/// Gradients of a scalar with respect to the parameters registered on a tape.
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    grads: HashMap<ParamId, Matrix>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Result<&Matrix, NumericsError> {
        self.grads
            .get(&id)
            .ok_or(NumericsError::UnknownParam { id: id.0 })
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ParamId, &Matrix)> {
        self.grads.iter()
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    /// Adds `other` into `self`, parameter by parameter.
    pub fn accumulate(&mut self, other: &Gradients) {
        let mut ids: Vec<_> = other.grads.keys().copied().collect();
        ids.sort();
        for id in ids {
            let g = &other.grads[&id];
            match self.grads.get_mut(&id) {
                Some(acc) => acc.add_assign(g),
                None => {
                    self.grads.insert(id, g.clone());
                }
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for g in self.grads.values_mut() {
            g.scale_assign(s);
        }
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
    non_finite: Option<&'static str>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Matrix, op: Op, name: &'static str) -> Var {
        if self.non_finite.is_none() && !value.is_finite() {
            self.non_finite = Some(name);
        }
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    #[inline]
    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Errors if any recorded value was NaN or infinite.
    pub fn check_finite(&self) -> Result<(), NumericsError> {
        match self.non_finite {
            Some(op) => Err(NumericsError::NonFinite { op }),
            None => Ok(()),
        }
    }

    /// A value that receives no gradient.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, "constant")
    }

    /// Registers a parameter, or returns its existing handle.
    pub fn param(&mut self, id: ParamId, value: &Matrix) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(value.clone(), Op::Param, "param");
        self.params.insert(id, v);
        v
    }

    pub fn is_registered(&self, id: ParamId) -> bool {
        self.params.contains_key(&id)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).matmul(self.value(b));
        self.push(out, Op::MatMul(a, b), "matmul")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut out = self.value(a).clone();
        assert_eq!(out.shape(), self.value(b).shape(), "add shape mismatch");
        out.add_assign(self.value(b));
        self.push(out, Op::Add(a, b), "add")
    }

    /// Adds a `1 x c` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Var {
        let b = self.value(bias);
        assert_eq!(b.rows(), 1);
        assert_eq!(b.cols(), self.value(a).cols(), "add_row width mismatch");
        let b = b.as_slice().to_vec();
        let mut out = self.value(a).clone();
        for r in 0..out.rows() {
            for (x, y) in out.row_mut(r).iter_mut().zip(&b) {
                *x += y;
            }
        }
        self.push(out, Op::AddRow(a, bias), "add_row")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let bv = self.value(b);
        assert_eq!(self.value(a).shape(), bv.shape(), "mul shape mismatch");
        let mut out = self.value(a).clone();
        for (x, y) in out.as_mut_slice().iter_mut().zip(bv.as_slice()) {
            *x *= y;
        }
        self.push(out, Op::Mul(a, b), "mul")
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let mut out = self.value(a).clone();
        out.scale_assign(s);
        self.push(out, Op::Scale(a, s), "scale")
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(ops::relu);
        self.push(out, Op::Relu(a), "relu")
    }

    /// Row-wise layer norm with `1 x c` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let xv = self.value(x);
        let g = self.value(gain).as_slice();
        let b = self.value(bias).as_slice();
        let mut out = Matrix::zeros(xv.rows(), xv.cols());
        let mut inv_std = Vec::with_capacity(xv.rows());
        for r in 0..xv.rows() {
            let (_, s) = ops::layer_norm_into(xv.row(r), g, b, ops::LN_EPS, out.row_mut(r));
            inv_std.push(s);
        }
        self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                inv_std,
            },
            "layer_norm",
        )
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut out = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let mut c0 = 0;
            for p in parts {
                let pv = self.value(*p);
                assert_eq!(pv.rows(), rows, "concat_cols row mismatch");
                out.row_mut(r)[c0..c0 + pv.cols()].copy_from_slice(pv.row(r));
                c0 += pv.cols();
            }
        }
        self.push(out, Op::ConcatCols(parts.to_vec()), "concat_cols")
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            let pv = self.value(*p);
            assert_eq!(pv.cols(), cols, "concat_rows col mismatch");
            data.extend_from_slice(pv.as_slice());
            rows += pv.rows();
        }
        let out = Matrix::from_vec(rows, cols, data).expect("sizes agree");
        self.push(out, Op::ConcatRows(parts.to_vec()), "concat_rows")
    }

    pub fn gather_rows(&mut self, a: Var, idx: Vec<usize>) -> Var {
        let out = self.value(a).gather_rows(&idx);
        self.push(out, Op::GatherRows(a, idx), "gather_rows")
    }

    /// Places the rows of each part at the given output rows; unset rows are zero.
    pub fn scatter_rows(&mut self, rows: usize, cols: usize, parts: Vec<(Var, Vec<usize>)>) -> Var {
        let mut out = Matrix::zeros(rows, cols);
        for (p, idx) in &parts {
            let pv = self.value(*p);
            assert_eq!(pv.rows(), idx.len(), "scatter_rows index count");
            assert_eq!(pv.cols(), cols, "scatter_rows width");
            for (i, &r) in idx.iter().enumerate() {
                out.row_mut(r).copy_from_slice(pv.row(i));
            }
        }
        self.push(out, Op::ScatterRows(parts), "scatter_rows")
    }

    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        plan: Arc<AttentionPlan>,
    ) -> Var {
        let (out, weights) =
            ops::sparse_attention(self.value(q), self.value(k), self.value(v), heads, &plan);
        self.push(
            out,
            Op::Attention {
                q,
                k,
                v,
                heads,
                plan,
                weights,
            },
            "attention",
        )
    }

    /// Mean binary cross-entropy of `n x 1` logits against 0/1 labels.
    pub fn bce_with_logits(&mut self, logits: Var, labels: Vec<f64>) -> Var {
        let z = self.value(logits);
        assert_eq!(z.cols(), 1);
        assert_eq!(z.rows(), labels.len());
        let n = labels.len() as f64;
        let total: f64 = z
            .as_slice()
            .iter()
            .zip(&labels)
            .map(|(&z, &y)| bce_term(z, y))
            .sum();
        self.push(
            Matrix::filled(1, 1, total / n),
            Op::BceWithLogits(logits, labels),
            "bce",
        )
    }

    /// Mean squared error of `n x 1` predictions.
    pub fn mse(&mut self, pred: Var, targets: Vec<f64>) -> Var {
        let p = self.value(pred);
        assert_eq!(p.cols(), 1);
        assert_eq!(p.rows(), targets.len());
        let n = targets.len() as f64;
        let total: f64 = p
            .as_slice()
            .iter()
            .zip(&targets)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        self.push(Matrix::filled(1, 1, total / n), Op::Mse(pred, targets), "mse")
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        self.push(Matrix::filled(1, 1, s), Op::SumAll(a), "sum")
    }

    /// Reverse pass from a `1 x 1` value.
    pub fn backward(&self, loss: Var) -> Result<Gradients, NumericsError> {
        self.check_finite()?;
        let lv = self.value(loss);
        if lv.shape() != (1, 1) {
            return Err(NumericsError::NotScalar { shape: lv.shape() });
        }
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::filled(1, 1, 1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {}
                Op::Param => {
                    grads[i] = Some(g);
                }
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let ga = acc_slot(&mut grads, *a, av.shape());
                    gemm(&g, false, bv, true, ga, 1.0);
                    let gb = acc_slot(&mut grads, *b, bv.shape());
                    gemm(av, true, &g, false, gb, 1.0);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, &g);
                    acc(&mut grads, *b, &g);
                }
                Op::AddRow(a, bias) => {
                    acc(&mut grads, *a, &g);
                    let mut gb = Matrix::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (x, y) in gb.as_mut_slice().iter_mut().zip(g.row(r)) {
                            *x += y;
                        }
                    }
                    acc(&mut grads, *bias, &gb);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let mut ga = g.clone();
                    for (x, y) in ga.as_mut_slice().iter_mut().zip(bv.as_slice()) {
                        *x *= y;
                    }
                    let mut gb = g;
                    for (x, y) in gb.as_mut_slice().iter_mut().zip(av.as_slice()) {
                        *x *= y;
                    }
                    acc(&mut grads, *a, &ga);
                    acc(&mut grads, *b, &gb);
                }
                Op::Scale(a, s) => {
                    let mut ga = g;
                    ga.scale_assign(*s);
                    acc(&mut grads, *a, &ga);
                }
                Op::Relu(a) => {
                    let av = self.value(*a);
                    let mut ga = g;
                    for (x, &y) in ga.as_mut_slice().iter_mut().zip(av.as_slice()) {
                        if y <= 0.0 {
                            *x = 0.0;
                        }
                    }
                    acc(&mut grads, *a, &ga);
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    inv_std,
                } => {
                    let xv = self.value(*x);
                    let gv = self.value(*gain).as_slice();
                    let cols = xv.cols();
                    let n = cols as f64;
                    let mut gx = Matrix::zeros(xv.rows(), cols);
                    let mut ggain = Matrix::zeros(1, cols);
                    let mut gbias = Matrix::zeros(1, cols);
                    let mut xhat = vec![0.0; cols];
                    let mut dxhat = vec![0.0; cols];
                    for r in 0..xv.rows() {
                        let row = xv.row(r);
                        let mean = row.iter().sum::<f64>() / n;
                        let s = inv_std[r];
                        let gr = g.row(r);
                        for c in 0..cols {
                            xhat[c] = (row[c] - mean) * s;
                            dxhat[c] = gr[c] * gv[c];
                            ggain.as_mut_slice()[c] += gr[c] * xhat[c];
                            gbias.as_mut_slice()[c] += gr[c];
                        }
                        let m1 = dxhat.iter().sum::<f64>() / n;
                        let m2 = dxhat.iter().zip(&xhat).map(|(a, b)| a * b).sum::<f64>() / n;
                        let out = gx.row_mut(r);
                        for c in 0..cols {
                            out[c] = s * (dxhat[c] - m1 - xhat[c] * m2);
                        }
                    }
                    acc(&mut grads, *x, &gx);
                    acc(&mut grads, *gain, &ggain);
                    acc(&mut grads, *bias, &gbias);
                }
                Op::ConcatCols(parts) => {
                    let mut c0 = 0;
                    for p in parts {
                        let pc = self.value(*p).cols();
                        let mut gp = Matrix::zeros(g.rows(), pc);
                        for r in 0..g.rows() {
                            gp.row_mut(r).copy_from_slice(&g.row(r)[c0..c0 + pc]);
                        }
                        acc(&mut grads, *p, &gp);
                        c0 += pc;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut r0 = 0;
                    for p in parts {
                        let pr = self.value(*p).rows();
                        let idx: Vec<usize> = (r0..r0 + pr).collect();
                        acc(&mut grads, *p, &g.gather_rows(&idx));
                        r0 += pr;
                    }
                }
                Op::GatherRows(a, idx) => {
                    let slot = acc_slot(&mut grads, *a, self.value(*a).shape());
                    for (o, &src) in idx.iter().enumerate() {
                        for (x, y) in slot.row_mut(src).iter_mut().zip(g.row(o)) {
                            *x += y;
                        }
                    }
                }
                Op::ScatterRows(parts) => {
                    for (p, idx) in parts {
                        acc(&mut grads, *p, &g.gather_rows(idx));
                    }
                }
                Op::Attention {
                    q,
                    k,
                    v,
                    heads,
                    plan,
                    weights,
                } => {
                    let (gq, gk, gv) = attention_backward(
                        self.value(*q),
                        self.value(*k),
                        self.value(*v),
                        *heads,
                        plan,
                        weights,
                        &g,
                    );
                    acc(&mut grads, *q, &gq);
                    acc(&mut grads, *k, &gk);
                    acc(&mut grads, *v, &gv);
                }
                Op::BceWithLogits(logits, labels) => {
                    let z = self.value(*logits);
                    let n = labels.len() as f64;
                    let s = g.get(0, 0) / n;
                    let gz: Vec<f64> = z
                        .as_slice()
                        .iter()
                        .zip(labels)
                        .map(|(&z, &y)| s * (sigmoid(z) - y))
                        .collect();
                    acc(&mut grads, *logits, &Matrix::column_vector(&gz));
                }
                Op::Mse(pred, targets) => {
                    let p = self.value(*pred);
                    let n = targets.len() as f64;
                    let s = 2.0 * g.get(0, 0) / n;
                    let gp: Vec<f64> = p
                        .as_slice()
                        .iter()
                        .zip(targets)
                        .map(|(a, b)| s * (a - b))
                        .collect();
                    acc(&mut grads, *pred, &Matrix::column_vector(&gp));
                }
                Op::SumAll(a) => {
                    let (r, c) = self.value(*a).shape();
                    acc(&mut grads, *a, &Matrix::filled(r, c, g.get(0, 0)));
                }
            }
        }

        let mut out = HashMap::with_capacity(self.params.len());
        for (&id, &var) in &self.params {
            let g = grads[var.0]
                .take()
                .unwrap_or_else(|| Matrix::zeros(self.value(var).rows(), self.value(var).cols()));
            out.insert(id, g);
        }
        Ok(Gradients { grads: out })
    }
}

#[inline]
pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable `-(y ln s(z) + (1-y) ln(1-s(z)))`.
#[inline]
pub(crate) fn bce_term(z: f64, y: f64) -> f64 {
    z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
}

fn acc_slot<'a>(grads: &'a mut [Option<Matrix>], v: Var, shape: (usize, usize)) -> &'a mut Matrix {
    grads[v.0].get_or_insert_with(|| Matrix::zeros(shape.0, shape.1))
}

fn acc(grads: &mut [Option<Matrix>], v: Var, g: &Matrix) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(g),
        slot @ None => *slot = Some(g.clone()),
    }
}

fn attention_backward(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    heads: usize,
    plan: &AttentionPlan,
    weights: &[f64],
    g: &Matrix,
) -> (Matrix, Matrix, Matrix) {
    let width = q.cols();
    let dh = width / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut gq = Matrix::zeros(q.rows(), width);
    let mut gk = Matrix::zeros(k.rows(), width);
    let mut gv = Matrix::zeros(v.rows(), width);
    let mut dscore = Vec::new();
    for i in 0..q.rows() {
        let seg = plan.segment(i);
        if seg.is_empty() {
            continue;
        }
        let base = plan.offsets[i];
        for h in 0..heads {
            let cols = h * dh..(h + 1) * dh;
            let go = &g.row(i)[cols.clone()];
            // d out / d v_j = a_j; d out / d a_j = v_j.
            dscore.clear();
            let mut weighted = 0.0;
            for (e, &j) in seg.iter().enumerate() {
                let a = weights[(base + e) * heads + h];
                let gvj = &mut gv.row_mut(j)[cols.clone()];
                for c in 0..dh {
                    gvj[c] += a * go[c];
                }
                let da: f64 = v.row(j)[cols.clone()]
                    .iter()
                    .zip(go)
                    .map(|(x, y)| x * y)
                    .sum();
                dscore.push(da);
                weighted += a * da;
            }
            for (e, &j) in seg.iter().enumerate() {
                let a = weights[(base + e) * heads + h];
                let ds = a * (dscore[e] - weighted) * scale;
                if ds == 0.0 {
                    continue;
                }
                let kj = &k.row(j)[cols.clone()];
                let gqi = &mut gq.row_mut(i)[cols.clone()];
                for c in 0..dh {
                    gqi[c] += ds * kj[c];
                }
                let qi = &q.row(i)[cols.clone()];
                let gkj = &mut gk.row_mut(j)[cols.clone()];
                for c in 0..dh {
                    gkj[c] += ds * qi[c];
                }
            }
        }
    }
    (gq, gk, gv)
}
