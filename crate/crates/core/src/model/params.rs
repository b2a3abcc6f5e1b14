use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelError};
use crate::hetgraph::EdgeTypeId;
use crate::numerics::{Matrix, ParamId, ParamStore};

/// Component a parameter tensor belongs to, for count reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamShare {
    Embedders,
    Tca,
    Taa,
    Phi,
    Ffn,
    LayerNorm,
    Head,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Init {
    /// Uniform on `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    FanIn(usize),
    Zeros,
    Ones,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub share: ParamShare,
    pub(crate) init: Init,
}

fn spec(name: String, rows: usize, cols: usize, share: ParamShare, init: Init) -> ParamSpec {
    ParamSpec {
        name,
        rows,
        cols,
        share,
        init,
    }
}

/// Every parameter tensor of `cfg` in declaration order.
pub fn param_specs(cfg: &ModelConfig) -> Vec<ParamSpec> {
    use ParamShare::*;
    let d = cfg.d_model;
    let mut out = Vec::new();
    for (t, s) in cfg.registry.node_types().iter().enumerate() {
        out.push(spec(format!("embed.type{t}"), s.dim, d, Embedders, Init::FanIn(s.dim)));
    }
    for l in 0..cfg.layers {
        for s in 0..cfg.edge_sets.len() {
            for w in ["q", "k", "v"] {
                out.push(spec(format!("l{l}.tca.s{s}.{w}"), d, d, Tca, Init::FanIn(d)));
            }
        }
        out.push(spec(format!("l{l}.tca.out"), d, d, Tca, Init::FanIn(d)));
        for t in 0..cfg.n_node_types() {
            out.push(spec(format!("l{l}.taa.type{t}"), d, d, Taa, Init::FanIn(d)));
        }
        for w in ["q", "k", "v", "out"] {
            out.push(spec(format!("l{l}.taa.{w}"), d, d, Taa, Init::FanIn(d)));
        }
        let p = cfg.phi_hidden;
        out.push(spec(format!("l{l}.phi.w1"), 2 * d, p, Phi, Init::FanIn(2 * d)));
        out.push(spec(format!("l{l}.phi.b1"), 1, p, Phi, Init::Zeros));
        out.push(spec(format!("l{l}.phi.w2"), p, d, Phi, Init::FanIn(p)));
        out.push(spec(format!("l{l}.phi.b2"), 1, d, Phi, Init::Zeros));
        out.push(spec(format!("l{l}.ln1.g"), 1, d, LayerNorm, Init::Ones));
        out.push(spec(format!("l{l}.ln1.b"), 1, d, LayerNorm, Init::Zeros));
        let f = cfg.ffn_hidden;
        out.push(spec(format!("l{l}.ffn.w1"), d, f, Ffn, Init::FanIn(d)));
        out.push(spec(format!("l{l}.ffn.b1"), 1, f, Ffn, Init::Zeros));
        out.push(spec(format!("l{l}.ffn.w2"), f, d, Ffn, Init::FanIn(f)));
        out.push(spec(format!("l{l}.ffn.b2"), 1, d, Ffn, Init::Zeros));
        out.push(spec(format!("l{l}.ln2.g"), 1, d, LayerNorm, Init::Ones));
        out.push(spec(format!("l{l}.ln2.b"), 1, d, LayerNorm, Init::Zeros));
    }
    if let Some(k) = cfg.head_hidden {
        out.push(spec("head.w1".into(), 3 * d, k, Head, Init::FanIn(3 * d)));
        out.push(spec("head.b1".into(), 1, k, Head, Init::Zeros));
        out.push(spec("head.w2".into(), k, 1, Head, Init::FanIn(k)));
        for t in 0..cfg.n_edge_types() {
            out.push(spec(format!("head.bias.r{t}"), 1, 1, Head, Init::Zeros));
        }
    }
    out
}

/// Closed-form parameter count with a per-component breakdown.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ParamCount {
    pub total: usize,
    pub embedders: usize,
    pub tca: usize,
    pub taa: usize,
    pub phi: usize,
    pub ffn: usize,
    pub layer_norm: usize,
    pub head: usize,
}

impl ParamCount {
    pub fn share(&self, s: ParamShare) -> f64 {
        let n = match s {
            ParamShare::Embedders => self.embedders,
            ParamShare::Tca => self.tca,
            ParamShare::Taa => self.taa,
            ParamShare::Phi => self.phi,
            ParamShare::Ffn => self.ffn,
            ParamShare::LayerNorm => self.layer_norm,
            ParamShare::Head => self.head,
        };
        n as f64 / self.total.max(1) as f64
    }
}

pub fn param_count(cfg: &ModelConfig) -> ParamCount {
    let d = cfg.d_model;
    let l = cfg.layers;
    let dims: usize = cfg.registry.node_types().iter().map(|s| s.dim).sum();
    let embedders = d * dims;
    let tca = l * (3 * cfg.edge_sets.len() + 1) * d * d;
    let taa = l * (cfg.n_node_types() + 4) * d * d;
    let p = cfg.phi_hidden;
    let phi = l * (2 * d * p + p + p * d + d);
    let f = cfg.ffn_hidden;
    let ffn = l * (2 * d * f + f + d);
    let layer_norm = l * 4 * d;
    let head = cfg
        .head_hidden
        .map_or(0, |k| 3 * d * k + 2 * k + cfg.n_edge_types());
    ParamCount {
        total: embedders + tca + taa + phi + ffn + layer_norm + head,
        embedders,
        tca,
        taa,
        phi,
        ffn,
        layer_norm,
        head,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct LayerIds {
    pub sets: Vec<[ParamId; 3]>,
    pub tca_out: ParamId,
    pub taa_type: Vec<ParamId>,
    pub taa_q: ParamId,
    pub taa_k: ParamId,
    pub taa_v: ParamId,
    pub taa_out: ParamId,
    pub phi_w1: ParamId,
    pub phi_b1: ParamId,
    pub phi_w2: ParamId,
    pub phi_b2: ParamId,
    pub ln1_g: ParamId,
    pub ln1_b: ParamId,
    pub ffn_w1: ParamId,
    pub ffn_b1: ParamId,
    pub ffn_w2: ParamId,
    pub ffn_b2: ParamId,
    pub ln2_g: ParamId,
    pub ln2_b: ParamId,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct HeadIds {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub bias: Vec<ParamId>,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Ids {
    pub embed: Vec<ParamId>,
    pub layers: Vec<LayerIds>,
    pub head: Option<HeadIds>,
}

impl Ids {
    fn resolve(cfg: &ModelConfig, store: &ParamStore) -> Ids {
        let id = |n: String| store.id(&n).unwrap_or_else(|| panic!("missing parameter {n}"));
        let layers = (0..cfg.layers)
            .map(|l| LayerIds {
                sets: (0..cfg.edge_sets.len())
                    .map(|s| {
                        [
                            id(format!("l{l}.tca.s{s}.q")),
                            id(format!("l{l}.tca.s{s}.k")),
                            id(format!("l{l}.tca.s{s}.v")),
                        ]
                    })
                    .collect(),
                tca_out: id(format!("l{l}.tca.out")),
                taa_type: (0..cfg.n_node_types())
                    .map(|t| id(format!("l{l}.taa.type{t}")))
                    .collect(),
                taa_q: id(format!("l{l}.taa.q")),
                taa_k: id(format!("l{l}.taa.k")),
                taa_v: id(format!("l{l}.taa.v")),
                taa_out: id(format!("l{l}.taa.out")),
                phi_w1: id(format!("l{l}.phi.w1")),
                phi_b1: id(format!("l{l}.phi.b1")),
                phi_w2: id(format!("l{l}.phi.w2")),
                phi_b2: id(format!("l{l}.phi.b2")),
                ln1_g: id(format!("l{l}.ln1.g")),
                ln1_b: id(format!("l{l}.ln1.b")),
                ffn_w1: id(format!("l{l}.ffn.w1")),
                ffn_b1: id(format!("l{l}.ffn.b1")),
                ffn_w2: id(format!("l{l}.ffn.w2")),
                ffn_b2: id(format!("l{l}.ffn.b2")),
                ln2_g: id(format!("l{l}.ln2.g")),
                ln2_b: id(format!("l{l}.ln2.b")),
            })
            .collect();
        let head = cfg.head_hidden.map(|_| HeadIds {
            w1: id("head.w1".into()),
            b1: id("head.b1".into()),
            w2: id("head.w2".into()),
            bias: (0..cfg.n_edge_types())
                .map(|t| id(format!("head.bias.r{t}")))
                .collect(),
        });
        Ids {
            embed: (0..cfg.n_node_types())
                .map(|t| id(format!("embed.type{t}")))
                .collect(),
            layers,
            head,
        }
    }
}

/// All learnable weights of a model together with its config.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    cfg: ModelConfig,
    store: ParamStore,
    pub(crate) ids: Ids,
}

fn init_matrix(s: &ParamSpec, rng: &mut ChaCha8Rng) -> Matrix {
    match s.init {
        Init::Zeros => Matrix::zeros(s.rows, s.cols),
        Init::Ones => Matrix::filled(s.rows, s.cols, 1.0),
        Init::FanIn(fan) => {
            let a = 1.0 / (fan.max(1) as f64).sqrt();
            let data = (0..s.rows * s.cols).map(|_| rng.random_range(-a..=a)).collect();
            Matrix::from_vec(s.rows, s.cols, data).expect("sized")
        }
    }
}

impl ModelParams {
    /// Fresh parameters: fan-in scaled uniform weights, zero biases, unit gains.
    pub fn init(cfg: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        for s in param_specs(&cfg) {
            let m = init_matrix(&s, &mut rng);
            store.insert(s.name, m)?;
        }
        let ids = Ids::resolve(&cfg, &store);
        Ok(Self { cfg, store, ids })
    }

    /// Assembles parameters from values in declaration order, validating shapes.
    pub fn from_values(cfg: ModelConfig, values: Vec<Matrix>, frozen: &[String]) -> Result<Self, ModelError> {
        cfg.validate()?;
        let specs = param_specs(&cfg);
        if specs.len() != values.len() {
            return Err(ModelError::Checkpoint(format!(
                "expected {} tensors, got {}",
                specs.len(),
                values.len()
            )));
        }
        let mut store = ParamStore::new();
        for (s, m) in specs.into_iter().zip(values) {
            if m.shape() != (s.rows, s.cols) {
                return Err(ModelError::Checkpoint(format!(
                    "{} has shape {:?}, config expects {:?}",
                    s.name,
                    m.shape(),
                    (s.rows, s.cols)
                )));
            }
            store.insert(s.name, m)?;
        }
        for name in frozen {
            let id = store
                .id(name)
                .ok_or_else(|| ModelError::Checkpoint(format!("unknown frozen parameter {name}")))?;
            store.set_frozen(id, true);
        }
        let ids = Ids::resolve(&cfg, &store);
        Ok(Self { cfg, store, ids })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.store.by_name(name)
    }

    /// Overwrites a named tensor; the shape must match.
    pub fn set(&mut self, name: &str, value: Matrix) -> Result<(), ModelError> {
        let id = self
            .store
            .id(name)
            .ok_or_else(|| ModelError::Config(format!("unknown parameter {name}")))?;
        if self.store.get(id).shape() != value.shape() {
            return Err(ModelError::Config(format!(
                "{name}: shape {:?} does not match {:?}",
                value.shape(),
                self.store.get(id).shape()
            )));
        }
        *self.store.get_mut(id) = value;
        Ok(())
    }

    pub fn frozen_names(&self) -> Vec<String> {
        self.store
            .ids()
            .filter(|&i| self.store.is_frozen(i))
            .map(|i| self.store.name(i).to_string())
            .collect()
    }

    pub fn scalar_count(&self) -> usize {
        self.store.scalar_count()
    }

    /// Adds node and edge types. Existing tensors keep their values and are
    /// frozen; new embedders, TAA type projections, singleton TCA edge sets
    /// and head biases are freshly initialized and trainable.
    pub fn extend_types(
        &self,
        new_node_types: &[(String, usize)],
        new_edge_types: &[String],
        seed: u64,
    ) -> Result<ModelParams, ModelError> {
        let mut cfg = self.cfg.clone();
        for (name, dim) in new_node_types {
            if cfg.registry.node_type_id(name).is_some() {
                return Err(ModelError::TypeCollision(name.clone()));
            }
            cfg.registry.add_node_type(name.clone(), *dim)?;
        }
        for name in new_edge_types {
            if cfg.registry.edge_type_id(name).is_some() {
                return Err(ModelError::TypeCollision(name.clone()));
            }
            let t = cfg.registry.add_edge_type(name.clone())?;
            cfg.edge_sets.push(vec![t]);
        }
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        for s in param_specs(&cfg) {
            let (m, frozen) = match self.store.by_name(&s.name) {
                Some(old) => (old.clone(), true),
                None => (init_matrix(&s, &mut rng), false),
            };
            let id = store.insert(s.name, m)?;
            store.set_frozen(id, frozen);
        }
        let ids = Ids::resolve(&cfg, &store);
        Ok(ModelParams { cfg, store, ids })
    }

    pub(crate) fn head_bias_id(&self, t: EdgeTypeId) -> Result<ParamId, ModelError> {
        let head = self.ids.head.as_ref().ok_or(ModelError::NoHead)?;
        head.bias
            .get(t.index())
            .copied()
            .ok_or(ModelError::UnknownEdgeType(t.0))
    }
}
