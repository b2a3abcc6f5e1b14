//! Executable separation between the full typed-attention block and its
//! single-branch ablations.
//!
//! A witness function `f(v) = s(a(v)) + s(b(v))` combines the mean feature
//! over one edge type (`a`) with the mean over the whole neighborhood (`b`),
//! passed through a soft threshold `s`. The full model realizes `f` exactly
//! with hand-set weights. Two pairs of star graphs separate the ablations:
//! `G_A`/`G_B` differ only in edge-type labels (invisible to TAA), and
//! `G_C`/`G_D` differ only in neighborhood cardinalities (invisible to TCA).

use num_rational::Rational64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::hetgraph::{sample_seed, EdgeTypeId, GraphBuilder, GraphError, HetGraph, NodeId, NodeTypeId, TypeRegistry};
use crate::model::{encode, AblationMode, Context, EncodeOptions, ModelConfig, ModelError, ModelParams};
use crate::numerics::{Matrix, Tape};

/// The distinguished edge type whose neighbors define `a(v)`.
pub const R_STAR: EdgeTypeId = EdgeTypeId(0);
/// The other edge type.
pub const R_PRIME: EdgeTypeId = EdgeTypeId(1);
/// The node every witness graph is evaluated at.
pub const CENTER: NodeId = 0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ExpressivityError {
    #[error("epsilon {0} must lie in (0, 1/4)")]
    Epsilon(f64),
    #[error("node {node} has no {which} neighbors")]
    EmptyNeighborhood { node: NodeId, which: &'static str },
    #[error("feature of node {0} is not 0 or 1")]
    NonBinaryFeature(NodeId),
    #[error("config cannot carry the witness: {0}")]
    Incompatible(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

fn check_eps(eps: f64) -> Result<(), ExpressivityError> {
    if eps > 0.0 && eps < 0.25 {
        Ok(())
    } else {
        Err(ExpressivityError::Epsilon(eps))
    }
}

/// `clip((t - (1/2 - eps)) / (2 eps), 0, 1)`.
pub fn soft_threshold(t: f64, eps: f64) -> Result<f64, ExpressivityError> {
    check_eps(eps)?;
    Ok(((t - (0.5 - eps)) / (2.0 * eps)).clamp(0.0, 1.0))
}

/// [`soft_threshold`] in exact rational arithmetic.
pub fn soft_threshold_exact(t: Rational64, eps: Rational64) -> Result<Rational64, ExpressivityError> {
    let zero = Rational64::from_integer(0);
    let one = Rational64::from_integer(1);
    let quarter = Rational64::new(1, 4);
    if !(eps > zero && eps < quarter) {
        return Err(ExpressivityError::Epsilon(*eps.numer() as f64 / *eps.denom() as f64));
    }
    let z = (t - (Rational64::new(1, 2) - eps)) / (eps * 2);
    Ok(z.max(zero).min(one))
}

/// `(a(v), b(v))` exactly, for graphs with 0/1 scalar features.
pub fn witness_inputs(g: &HetGraph, v: NodeId) -> Result<(Rational64, Rational64), ExpressivityError> {
    let view = g.view();
    let mean = |nodes: &[NodeId], which| -> Result<Rational64, ExpressivityError> {
        if nodes.is_empty() {
            return Err(ExpressivityError::EmptyNeighborhood { node: v, which });
        }
        let mut ones = 0i64;
        for &u in nodes {
            match g.features(u) {
                [x] if *x == 1.0 => ones += 1,
                [x] if *x == 0.0 => {}
                _ => return Err(ExpressivityError::NonBinaryFeature(u)),
            }
        }
        Ok(Rational64::new(ones, nodes.len() as i64))
    };
    let a = mean(&view.neighbors_by_set(v, &[R_STAR])?, "r*")?;
    let b = mean(&view.neighbors(v), "")?;
    Ok((a, b))
}

/// `f(v) = s(a(v)) + s(b(v))`, exactly.
pub fn target_f(g: &HetGraph, v: NodeId, eps: Rational64) -> Result<Rational64, ExpressivityError> {
    let (a, b) = witness_inputs(g, v)?;
    Ok(soft_threshold_exact(a, eps)? + soft_threshold_exact(b, eps)?)
}

pub fn witness_registry() -> TypeRegistry {
    let mut r = TypeRegistry::new();
    r.add_node_type("node", 1).expect("fresh registry");
    r.add_edge_type("r_star").expect("fresh registry");
    r.add_edge_type("r_prime").expect("fresh registry");
    r
}

/// A star centered at [`CENTER`] (feature 0) with one leaf per entry.
pub fn star(leaves: &[(f64, EdgeTypeId)]) -> HetGraph {
    let mut b = GraphBuilder::new(witness_registry());
    let t = NodeTypeId(0);
    let c = b.add_node("v", t, &[0.0]).expect("valid node");
    for (i, &(x, e)) in leaves.iter().enumerate() {
        let u = b.add_node(format!("u{}", i + 1), t, &[x]).expect("valid node");
        b.add_edge(u, c, e).expect("valid edge");
    }
    b.build()
}

#[derive(Debug, Clone)]
pub struct WitnessGraphs {
    pub a: HetGraph,
    pub b: HetGraph,
    pub c: HetGraph,
    pub d: HetGraph,
}

impl WitnessGraphs {
    pub fn named(&self) -> [(&'static str, &HetGraph); 4] {
        [("G_A", &self.a), ("G_B", &self.b), ("G_C", &self.c), ("G_D", &self.d)]
    }
}

pub fn build_pairs() -> WitnessGraphs {
    WitnessGraphs {
        a: star(&[(1.0, R_STAR), (0.0, R_PRIME)]),
        b: star(&[(1.0, R_PRIME), (0.0, R_STAR)]),
        c: star(&[(1.0, R_STAR), (0.0, R_PRIME), (0.0, R_PRIME), (0.0, R_PRIME)]),
        d: star(&[(1.0, R_STAR), (1.0, R_STAR), (1.0, R_STAR), (0.0, R_PRIME)]),
    }
}

/// Edge sets `{r*}, {r'}`, one-hop TAA without self-attention, Φ hidden 4.
pub fn witness_config(layers: usize, d_model: usize, heads: usize) -> ModelConfig {
    let mut cfg = ModelConfig::new(witness_registry(), layers, d_model, heads);
    cfg.edge_sets = vec![vec![R_STAR], vec![R_PRIME]];
    cfg.phi_hidden = 4;
    cfg.head_hidden = None;
    cfg.neighborhood.taa_hops = 1;
    cfg.neighborhood.taa_cap = 8;
    cfg.neighborhood.taa_include_self = false;
    cfg
}

/// The readout `relu(x W1 + b1) W2` with `x = (a, b)`, in row-vector form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WitnessWeights {
    pub eps: f64,
    /// `2 x 4`.
    pub w1: [[f64; 4]; 2],
    pub b1: [f64; 4],
    pub w2: [f64; 4],
}

impl WitnessWeights {
    pub fn new(eps: f64) -> Result<Self, ExpressivityError> {
        check_eps(eps)?;
        let s = 1.0 / (2.0 * eps);
        let c = 1.0 / (4.0 * eps);
        Ok(Self {
            eps,
            w1: [[s, s, 0.0, 0.0], [0.0, 0.0, s, s]],
            b1: [0.5 - c, -0.5 - c, 0.5 - c, -0.5 - c],
            w2: [1.0, -1.0, 1.0, -1.0],
        })
    }

    pub fn readout(&self, a: f64, b: f64) -> f64 {
        (0..4)
            .map(|j| (a * self.w1[0][j] + b * self.w1[1][j] + self.b1[j]).max(0.0) * self.w2[j])
            .sum()
    }
}

fn identity(d: usize) -> Matrix {
    let mut m = Matrix::zeros(d, d);
    for i in 0..d {
        m.set(i, i, 1.0);
    }
    m
}

/// Parameters under which coordinate 0 of the layer's combined attention
/// output (before the residual) equals `f(v)`. Attention scores are zeroed
/// so every softmax is uniform; values copy the scalar feature into
/// coordinate 0, the `{r'}` value projection is zero, and Φ holds the
/// readout. Parameters outside the attention sub-block keep their seeded
/// initial values.
pub fn install_witness(cfg: &ModelConfig, eps: f64, seed: u64) -> Result<ModelParams, ExpressivityError> {
    let w = WitnessWeights::new(eps)?;
    let bad = |m: &str| Err(ExpressivityError::Incompatible(m.into()));
    if cfg.layers != 1 {
        return bad("exactly one layer is required");
    }
    if cfg.registry.n_node_types() != 1 || cfg.registry.node_types()[0].dim != 1 {
        return bad("a single node type with scalar features is required");
    }
    if cfg.edge_sets != vec![vec![R_STAR], vec![R_PRIME]] {
        return bad("edge sets must be {r*}, {r'}");
    }
    if cfg.phi_hidden < 4 {
        return bad("phi_hidden must be at least 4");
    }
    if cfg.neighborhood.taa_include_self || cfg.neighborhood.taa_hops != 1 {
        return bad("TAA must be one-hop without self-attention");
    }
    let d = cfg.d_model;
    let p = cfg.phi_hidden;
    let mut params = ModelParams::init(cfg.clone(), seed)?;
    let mut embed = Matrix::zeros(1, d);
    embed.set(0, 0, 1.0);
    params.set("embed.type0", embed)?;
    for s in 0..2 {
        params.set(&format!("l0.tca.s{s}.q"), Matrix::zeros(d, d))?;
        params.set(&format!("l0.tca.s{s}.k"), Matrix::zeros(d, d))?;
    }
    params.set("l0.tca.s0.v", identity(d))?;
    params.set("l0.tca.s1.v", Matrix::zeros(d, d))?;
    params.set("l0.tca.out", identity(d))?;
    params.set("l0.taa.type0", identity(d))?;
    params.set("l0.taa.q", Matrix::zeros(d, d))?;
    params.set("l0.taa.k", Matrix::zeros(d, d))?;
    params.set("l0.taa.v", identity(d))?;
    params.set("l0.taa.out", identity(d))?;
    let mut w1 = Matrix::zeros(2 * d, p);
    let mut b1 = Matrix::zeros(1, p);
    let mut w2 = Matrix::zeros(p, d);
    for j in 0..4 {
        w1.set(0, j, w.w1[0][j]);
        w1.set(d, j, w.w1[1][j]);
        b1.set(0, j, w.b1[j]);
        w2.set(j, 0, w.w2[j]);
    }
    params.set("l0.phi.w1", w1)?;
    params.set("l0.phi.b1", b1)?;
    params.set("l0.phi.w2", w2)?;
    params.set("l0.phi.b2", Matrix::zeros(1, d))?;
    Ok(params)
}

/// Coordinate 0 of the combined attention output at `v`, and the block's
/// full output row at `v`.
pub fn witness_output(params: &ModelParams, g: &HetGraph, v: NodeId) -> Result<(f64, Vec<f64>), ExpressivityError> {
    let mut tape = Tape::new();
    let ctx = Context {
        view: params.config().neighborhood.view(g),
        targets: vec![v],
    };
    let opts = EncodeOptions {
        trace: true,
        ..Default::default()
    };
    let enc = encode(params, &mut tape, &[ctx], &opts)?;
    let last = enc.traces.last().ok_or_else(|| ExpressivityError::Incompatible("no layers".into()))?;
    let mixed = tape.value(last.mixed).get(0, 0);
    Ok((mixed, tape.value(enc.h).row(0).to_vec()))
}

fn embedding(params: &ModelParams, g: &HetGraph, mode: AblationMode) -> Result<Vec<f64>, ExpressivityError> {
    let mut tape = Tape::new();
    let ctx = Context {
        view: params.config().neighborhood.view(g),
        targets: vec![CENTER],
    };
    let opts = EncodeOptions {
        mode,
        ..Default::default()
    };
    let enc = encode(params, &mut tape, &[ctx], &opts)?;
    Ok(tape.value(enc.h).row(0).to_vec())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeparationOptions {
    pub trials: usize,
    pub eps: f64,
    /// Model depths at which ablation indistinguishability is checked.
    pub depths: Vec<usize>,
    pub d_model: usize,
    pub heads: usize,
    pub seed: u64,
}

impl Default for SeparationOptions {
    fn default() -> Self {
        Self {
            trials: 100,
            eps: 0.125,
            depths: vec![1, 2],
            d_model: 4,
            heads: 2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Realization {
    pub graph: String,
    /// Exact `f(v)`.
    pub target: f64,
    pub sub_block: f64,
    pub error: f64,
    /// Output of the whole block, residual and normalization included.
    pub full_block: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Indistinguishability {
    pub mode: AblationMode,
    pub pair: String,
    pub depth: usize,
    pub trials: usize,
    pub identical: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparationReport {
    pub eps: f64,
    pub realization: Vec<Realization>,
    pub max_realization_error: f64,
    pub ablations: Vec<Indistinguishability>,
    pub pass: bool,
}

/// Realization tolerance for the witness weights.
pub const REALIZATION_TOL: f64 = 1e-9;

pub fn verify_separation(opts: &SeparationOptions) -> Result<SeparationReport, ExpressivityError> {
    check_eps(opts.eps)?;
    if opts.trials == 0 {
        return Err(ExpressivityError::Incompatible("at least one trial is required".into()));
    }
    let graphs = build_pairs();
    let eps_q = Rational64::approximate_float(opts.eps).ok_or(ExpressivityError::Epsilon(opts.eps))?;
    let witness = install_witness(&witness_config(1, opts.d_model, opts.heads), opts.eps, opts.seed)?;
    let mut realization = Vec::new();
    for (name, g) in graphs.named() {
        let t = target_f(g, CENTER, eps_q)?;
        let target = *t.numer() as f64 / *t.denom() as f64;
        let (sub_block, full_block) = witness_output(&witness, g, CENTER)?;
        realization.push(Realization {
            graph: name.into(),
            target,
            sub_block,
            error: (sub_block - target).abs(),
            full_block,
        });
    }
    let max_realization_error = realization.iter().map(|r| r.error).fold(0.0, f64::max);

    let mut ablations = Vec::new();
    for &depth in &opts.depths {
        let cfg = witness_config(depth, opts.d_model, opts.heads);
        for (mode, pair, g1, g2) in [
            (AblationMode::TaaOnly, "G_A/G_B", &graphs.a, &graphs.b),
            (AblationMode::TcaOnly, "G_C/G_D", &graphs.c, &graphs.d),
        ] {
            let same: Vec<bool> = (0..opts.trials)
                .into_par_iter()
                .map(|t| {
                    let p = ModelParams::init(cfg.clone(), sample_seed(opts.seed, depth as u64, t as u64))?;
                    Ok(embedding(&p, g1, mode)? == embedding(&p, g2, mode)?)
                })
                .collect::<Result<_, ExpressivityError>>()?;
            ablations.push(Indistinguishability {
                mode,
                pair: pair.into(),
                depth,
                trials: opts.trials,
                identical: same.iter().filter(|&&s| s).count(),
            });
        }
    }
    let pass = max_realization_error < REALIZATION_TOL && ablations.iter().all(|a| a.identical == a.trials);
    Ok(SeparationReport {
        eps: opts.eps,
        realization,
        max_realization_error,
        ablations,
        pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn threshold_examples() {
        for eps in [0.01, 0.1, 0.125, 0.2, 0.249] {
            assert_eq!(soft_threshold(1.0, eps).unwrap(), 1.0);
            assert_eq!(soft_threshold(0.0, eps).unwrap(), 0.0);
            assert!((soft_threshold(0.5, eps).unwrap() - 0.5).abs() < 1e-15);
            assert_eq!(soft_threshold(0.25, eps).unwrap(), 0.0);
            assert_eq!(soft_threshold(0.75, eps).unwrap(), 1.0);
        }
        assert!(soft_threshold(0.5, 0.25).is_err());
        assert!(soft_threshold(0.5, 0.0).is_err());
    }

    #[test]
    fn exact_threshold_examples() {
        let eps = Rational64::new(1, 10);
        let r = |n, d| Rational64::new(n, d);
        assert_eq!(soft_threshold_exact(r(1, 2), eps).unwrap(), r(1, 2));
        assert_eq!(soft_threshold_exact(r(1, 4), eps).unwrap(), r(0, 1));
        assert_eq!(soft_threshold_exact(r(3, 4), eps).unwrap(), r(1, 1));
        assert_eq!(soft_threshold_exact(r(11, 20), eps).unwrap(), r(3, 4));
    }

    #[test]
    fn readout_implements_threshold_sum() {
        let w = WitnessWeights::new(0.1).unwrap();
        for (a, b) in [(0.0, 0.0), (1.0, 0.5), (0.45, 0.55), (0.3, 0.9)] {
            let want = soft_threshold(a, 0.1).unwrap() + soft_threshold(b, 0.1).unwrap();
            assert!((w.readout(a, b) - want).abs() < 1e-12);
        }
    }
}
