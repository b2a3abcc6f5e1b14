//! Straight-line transcription of the encoder used as a test oracle.
#![allow(dead_code)]

use std::collections::HashMap;

use hetfm::hetgraph::{EdgeTypeId, GraphBuilder, HetGraph, MessageView, NodeId, TypeRegistry};
use hetfm::model::{AblationMode, ModelParams};
use hetfm::numerics::{Matrix, LN_EPS};
use hetfm::syngen::{generate, SynConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn registry(dims: &[usize], n_edge_types: usize) -> TypeRegistry {
    let mut r = TypeRegistry::new();
    for (i, &d) in dims.iter().enumerate() {
        r.add_node_type(format!("n{i}"), d).unwrap();
    }
    for i in 0..n_edge_types {
        r.add_edge_type(format!("r{i}")).unwrap();
    }
    r
}

pub fn small_graph(n: usize, seed: u64) -> HetGraph {
    generate(&SynConfig {
        n_nodes: n,
        n_node_types: 2,
        n_edge_types: 3,
        mean_degree: 3.0,
        degree_cutoff: 10.0,
        feature_dims: vec![3, 2],
        community_size: 10,
        seed,
        ..SynConfig::default()
    })
    .unwrap()
}

/// Overwrites every parameter with uniform values in `[-a, a]`.
pub fn randomize(p: &mut ModelParams, seed: u64, a: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let store = p.store_mut();
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        for x in store.get_mut(id).as_mut_slice() {
            *x = rng.random_range(-a..=a);
        }
    }
}

pub fn vecmat(x: &[f64], m: &Matrix) -> Vec<f64> {
    assert_eq!(x.len(), m.rows());
    (0..m.cols())
        .map(|j| (0..m.rows()).map(|i| x[i] * m.get(i, j)).sum())
        .collect()
}

pub fn vadd(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn relu(a: &[f64]) -> Vec<f64> {
    a.iter().map(|x| x.max(0.0)).collect()
}

pub fn ln(x: &[f64], g: &Matrix, b: &Matrix) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let s = (var + LN_EPS).sqrt();
    (0..x.len())
        .map(|i| (x[i] - mean) / s * g.get(0, i) + b.get(0, i))
        .collect()
}

/// Multi-head softmax attention of one query over a key list.
pub fn attend(q: &[f64], keys: &[Vec<f64>], vals: &[Vec<f64>], heads: usize) -> Vec<f64> {
    let d = q.len();
    let dh = d / heads;
    let mut out = vec![0.0; d];
    for h in 0..heads {
        let r = h * dh..(h + 1) * dh;
        let scores: Vec<f64> = keys
            .iter()
            .map(|k| q[r.clone()].iter().zip(&k[r.clone()]).map(|(a, b)| a * b).sum::<f64>() / (dh as f64).sqrt())
            .collect();
        let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
        let z: f64 = e.iter().sum();
        for (w, v) in e.iter().zip(vals) {
            for c in r.clone() {
                out[c] += w / z * v[c];
            }
        }
    }
    out
}

pub struct Reference<'a> {
    pub p: &'a ModelParams,
    pub view: &'a MessageView<'a>,
    pub mode: AblationMode,
    pub seed: u64,
    memo: HashMap<(usize, NodeId), Vec<f64>>,
}

impl<'a> Reference<'a> {
    pub fn new(p: &'a ModelParams, view: &'a MessageView<'a>, mode: AblationMode, seed: u64) -> Self {
        Self { p, view, mode, seed, memo: HashMap::new() }
    }

    fn w(&self, name: &str) -> &'a Matrix {
        self.p.get(name).unwrap_or_else(|| panic!("{name}"))
    }

    pub fn tca(&mut self, l: usize, v: NodeId) -> Vec<f64> {
        let cfg = self.p.config();
        let hv = self.h(l, v);
        let mut acc = vec![0.0; cfg.d_model];
        for (s, set) in cfg.edge_sets.clone().iter().enumerate() {
            let nbrs = self.view.neighbors_by_set(v, set).unwrap();
            if nbrs.is_empty() {
                continue;
            }
            let q = vecmat(&hv, self.w(&format!("l{l}.tca.s{s}.q")));
            let hs: Vec<Vec<f64>> = nbrs.iter().map(|&u| self.h(l, u)).collect();
            let ks: Vec<_> = hs.iter().map(|x| vecmat(x, self.w(&format!("l{l}.tca.s{s}.k")))).collect();
            let vs: Vec<_> = hs.iter().map(|x| vecmat(x, self.w(&format!("l{l}.tca.s{s}.v")))).collect();
            acc = vadd(&acc, &attend(&q, &ks, &vs, cfg.heads));
        }
        vecmat(&acc, self.w(&format!("l{l}.tca.out")))
    }

    pub fn taa(&mut self, l: usize, v: NodeId) -> Vec<f64> {
        let cfg = self.p.config();
        let nb = &cfg.neighborhood;
        let g = self.view.graph();
        let mut list = Vec::new();
        if nb.taa_include_self {
            list.push(v);
        }
        list.extend(self.view.sample_taa_neighborhood(v, nb.taa_hops, nb.taa_cap, self.seed).unwrap());
        let hat = |me: &mut Self, u: NodeId| {
            let x = me.h(l, u);
            vecmat(&x, me.w(&format!("l{l}.taa.type{}", g.node_type(u).index())))
        };
        let hv = hat(self, v);
        let q = vecmat(&hv, self.w(&format!("l{l}.taa.q")));
        let hs: Vec<Vec<f64>> = list.iter().map(|&u| hat(self, u)).collect();
        let ks: Vec<_> = hs.iter().map(|x| vecmat(x, self.w(&format!("l{l}.taa.k")))).collect();
        let vs: Vec<_> = hs.iter().map(|x| vecmat(x, self.w(&format!("l{l}.taa.v")))).collect();
        vecmat(&attend(&q, &ks, &vs, cfg.heads), self.w(&format!("l{l}.taa.out")))
    }

    pub fn phi(&self, l: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
        let cat: Vec<f64> = a.iter().chain(b).copied().collect();
        let x = relu(&vadd(&vecmat(&cat, self.w(&format!("l{l}.phi.w1"))), self.w(&format!("l{l}.phi.b1")).as_slice()));
        vadd(&vecmat(&x, self.w(&format!("l{l}.phi.w2"))), self.w(&format!("l{l}.phi.b2")).as_slice())
    }

    pub fn block(&self, l: usize, h: &[f64], mixed: &[f64]) -> Vec<f64> {
        let w = |n: &str| self.w(&format!("l{l}.{n}"));
        let z = ln(&vadd(h, mixed), w("ln1.g"), w("ln1.b"));
        let f = relu(&vadd(&vecmat(&z, w("ffn.w1")), w("ffn.b1").as_slice()));
        let f = vadd(&vecmat(&f, w("ffn.w2")), w("ffn.b2").as_slice());
        ln(&vadd(&z, &f), w("ln2.g"), w("ln2.b"))
    }

    pub fn h(&mut self, l: usize, v: NodeId) -> Vec<f64> {
        if let Some(x) = self.memo.get(&(l, v)) {
            return x.clone();
        }
        let g = self.view.graph();
        let out = if l == 0 {
            vecmat(g.features(v), self.w(&format!("embed.type{}", g.node_type(v).index())))
        } else {
            let k = l - 1;
            let hv = self.h(k, v);
            let mixed = match self.mode {
                AblationMode::Full => {
                    let a = self.tca(k, v);
                    let b = self.taa(k, v);
                    self.phi(k, &a, &b)
                }
                AblationMode::TcaOnly => self.tca(k, v),
                AblationMode::TaaOnly => self.taa(k, v),
            };
            self.block(k, &hv, &mixed)
        };
        self.memo.insert((l, v), out.clone());
        out
    }

    pub fn link(&self, hu: &[f64], hv: &[f64], t: EdgeTypeId) -> f64 {
        let x: Vec<f64> = hu
            .iter()
            .chain(hv)
            .copied()
            .chain(hu.iter().zip(hv).map(|(a, b)| a * b))
            .collect();
        let x = relu(&vadd(&vecmat(&x, self.w("head.w1")), self.w("head.b1").as_slice()));
        vecmat(&x, self.w("head.w2"))[0] + self.w(&format!("head.bias.r{}", t.0)).get(0, 0)
    }
}

/// Star with center 0: leaves with `(feature, edge type)`.
pub fn star(reg: &TypeRegistry, leaves: &[(f64, u16)]) -> HetGraph {
    let mut b = GraphBuilder::new(reg.clone());
    let t = hetfm::hetgraph::NodeTypeId(0);
    let c = b.add_node("c", t, &[0.0]).unwrap();
    for (i, &(x, e)) in leaves.iter().enumerate() {
        let u = b.add_node(format!("u{i}"), t, &[x]).unwrap();
        b.add_edge(c, u, EdgeTypeId(e)).unwrap();
    }
    b.build()
}
