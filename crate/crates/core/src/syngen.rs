//! Synthetic heterogeneous graphs with controllable type skew, heavy-tailed
//! degrees, community structure, and planted structure-dependent labels.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::weighted::WeightedIndex;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::hetgraph::{sample_seed, EdgeId, EdgeTypeId, GraphBuilder, HetGraph, NodeId, NodeTypeId, TypeRegistry};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynConfig {
    pub n_nodes: usize,
    pub n_node_types: usize,
    pub n_edge_types: usize,
    /// Type `i` gets weight proportional to `(i + 1)^-skew`.
    pub node_type_skew: f64,
    pub edge_type_skew: f64,
    pub mean_degree: f64,
    /// Tail exponent of the degree propensity distribution.
    pub degree_exponent: f64,
    /// Exponential cutoff of the degree propensity, in units of degree.
    pub degree_cutoff: f64,
    /// Feature dimension per node type; a single entry applies to all types.
    pub feature_dims: Vec<usize>,
    /// Distance scale between the two mixture means of each type.
    pub feature_separation: f64,
    pub community_size: usize,
    /// Probability an edge stays inside its source's community.
    pub homophily: f64,
    /// Probability an edge honours its type's latent-component preference
    /// (even types join equal components, odd types join different ones).
    pub latent_affinity: f64,
    /// Number of disjoint blocks; edges never cross blocks.
    pub components: usize,
    /// Probability that an edge of type `t` starts in a community whose
    /// preferred type is `t`. Zero spreads every type evenly.
    pub type_locality: f64,
    /// Scale of a per-community feature offset, shared by members of the
    /// same node type. Zero leaves features independent of community.
    pub community_signal: f64,
    pub seed: u64,
}

impl Default for SynConfig {
    fn default() -> Self {
        Self {
            n_nodes: 1000,
            n_node_types: 3,
            n_edge_types: 4,
            node_type_skew: 1.0,
            edge_type_skew: 1.0,
            mean_degree: 8.0,
            degree_exponent: 2.5,
            degree_cutoff: 200.0,
            feature_dims: vec![8],
            feature_separation: 1.0,
            community_size: 50,
            homophily: 0.8,
            latent_affinity: 0.8,
            components: 1,
            type_locality: 0.0,
            community_signal: 0.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SynError {
    #[error("infeasible config: {0}")]
    Infeasible(String),
    #[error("unknown type {0:?}")]
    UnknownType(String),
    #[error("feature index {index} out of range for node type {node_type:?} (dim {dim})")]
    FeatureOutOfRange {
        index: usize,
        node_type: String,
        dim: usize,
    },
}

impl SynConfig {
    pub fn dim(&self, t: usize) -> usize {
        if self.feature_dims.len() == 1 {
            self.feature_dims[0]
        } else {
            self.feature_dims[t]
        }
    }

    pub fn node_type_weights(&self) -> Vec<f64> {
        power_weights(self.n_node_types, self.node_type_skew)
    }

    pub fn edge_type_weights(&self) -> Vec<f64> {
        power_weights(self.n_edge_types, self.edge_type_skew)
    }

    fn validate(&self) -> Result<(), SynError> {
        let bad = |m: &str| Err(SynError::Infeasible(m.to_string()));
        if self.n_nodes == 0 {
            return bad("n_nodes must be at least 1");
        }
        if self.n_node_types == 0 || self.n_edge_types == 0 {
            return bad("need at least one node type and one edge type");
        }
        if self.feature_dims.is_empty()
            || (self.feature_dims.len() != 1 && self.feature_dims.len() != self.n_node_types)
        {
            return bad("feature_dims must have one entry or one per node type");
        }
        if self.feature_dims.contains(&0) {
            return bad("feature dims must be at least 1");
        }
        if !(self.mean_degree >= 0.0) || self.mean_degree >= self.n_nodes as f64 {
            return bad("mean degree must lie in [0, n_nodes)");
        }
        if self.components == 0 || self.components > self.n_nodes {
            return bad("components must lie in [1, n_nodes]");
        }
        if self.community_size == 0 {
            return bad("community_size must be at least 1");
        }
        if !(self.community_signal >= 0.0) || !self.community_signal.is_finite() {
            return bad("community_signal must be finite and nonnegative");
        }
        for p in [self.homophily, self.latent_affinity, self.type_locality] {
            if !(0.0..=1.0).contains(&p) {
                return bad("probabilities must lie in [0, 1]");
            }
        }
        Ok(())
    }
}

fn power_weights(n: usize, skew: f64) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|i| ((i + 1) as f64).powf(-skew)).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|x| x / s).collect()
}

/// Integer counts summing to `total` closest to `total * weights`
/// (largest-remainder rounding, ties to the lower index).
pub fn quota_counts(total: usize, weights: &[f64]) -> Vec<usize> {
    let exact: Vec<f64> = weights.iter().map(|w| w * total as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

/// Total-variation distance between two distributions.
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

struct Pool {
    nodes: Vec<NodeId>,
    cum: Vec<f64>,
}

impl Pool {
    fn new(nodes: Vec<NodeId>, w: &[f64]) -> Self {
        let mut acc = 0.0;
        let cum = nodes
            .iter()
            .map(|&v| {
                acc += w[v];
                acc
            })
            .collect();
        Self { nodes, cum }
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> Option<NodeId> {
        let total = *self.cum.last()?;
        if total <= 0.0 {
            return None;
        }
        let r = rng.random::<f64>() * total;
        let i = self.cum.partition_point(|&c| c <= r).min(self.nodes.len() - 1);
        Some(self.nodes[i])
    }

    fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Generates a graph; the same config always yields the same graph.
pub fn generate(cfg: &SynConfig) -> Result<HetGraph, SynError> {
    cfg.validate()?;
    let n = cfg.n_nodes;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut reg = TypeRegistry::new();
    for t in 0..cfg.n_node_types {
        reg.add_node_type(format!("n{t}"), cfg.dim(t))
            .map_err(|e| SynError::Infeasible(e.to_string()))?;
    }
    for t in 0..cfg.n_edge_types {
        reg.add_edge_type(format!("r{t}"))
            .map_err(|e| SynError::Infeasible(e.to_string()))?;
    }

    let mut types: Vec<usize> = quota_counts(n, &cfg.node_type_weights())
        .into_iter()
        .enumerate()
        .flat_map(|(t, c)| std::iter::repeat_n(t, c))
        .collect();
    types.shuffle(&mut rng);

    let latent: Vec<usize> = (0..n).map(|_| rng.random_range(0..2)).collect();

    // Mixture means per (type, component).
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let means: Vec<[Vec<f64>; 2]> = (0..cfg.n_node_types)
        .map(|t| {
            let d = cfg.dim(t);
            let a: Vec<f64> = (0..d).map(|_| normal.sample(&mut rng) * cfg.feature_separation).collect();
            let b: Vec<f64> = (0..d).map(|_| normal.sample(&mut rng) * cfg.feature_separation).collect();
            [a, b]
        })
        .collect();

    let mut features: Vec<Vec<f64>> = (0..n)
        .map(|v| {
            means[types[v]][latent[v]]
                .iter()
                .map(|&m| m + normal.sample(&mut rng))
                .collect()
        })
        .collect();

    // Blocks are contiguous id ranges; communities are contiguous within a block.
    let block_of: Vec<usize> = (0..n).map(|v| v * cfg.components / n).collect();
    let mut community = vec![0usize; n];
    let mut n_comm = 0;
    for blk in 0..cfg.components {
        let members: Vec<NodeId> = (0..n).filter(|&v| block_of[v] == blk).collect();
        let k = members.len().div_ceil(cfg.community_size).max(1);
        let mut labels: Vec<usize> = (0..members.len()).map(|i| i % k).collect();
        labels.shuffle(&mut rng);
        for (v, l) in members.iter().zip(labels) {
            community[*v] = n_comm + l;
        }
        n_comm += k;
    }

    if cfg.community_signal > 0.0 {
        // A separate stream keeps the rest of the graph unchanged.
        let mut crng = ChaCha8Rng::seed_from_u64(sample_seed(cfg.seed, 0xC0, 0));
        let offsets: Vec<Vec<Vec<f64>>> = (0..n_comm)
            .map(|_| {
                (0..cfg.n_node_types)
                    .map(|t| (0..cfg.dim(t)).map(|_| normal.sample(&mut crng) * cfg.community_signal).collect())
                    .collect()
            })
            .collect();
        for (v, x) in features.iter_mut().enumerate() {
            for (a, o) in x.iter_mut().zip(&offsets[community[v]][types[v]]) {
                *a += o;
            }
        }
    }

    let mut b = GraphBuilder::new(reg);
    for (v, x) in features.iter().enumerate() {
        b.add_node(format!("v{v}"), NodeTypeId(types[v] as u16), x)
            .map_err(|e| SynError::Infeasible(e.to_string()))?;
    }

    let weights = degree_propensities(cfg, &mut rng);

    let target_edges = (n as f64 * cfg.mean_degree / 2.0).round() as usize;
    if target_edges > 0 {
        let pool_of = |key: &dyn Fn(NodeId) -> usize, k: usize| -> Vec<Pool> {
            let mut buckets = vec![Vec::new(); k];
            for v in 0..n {
                buckets[key(v)].push(v);
            }
            buckets.into_iter().map(|b| Pool::new(b, &weights)).collect()
        };
        let by_block = pool_of(&|v| block_of[v], cfg.components);
        let by_block_z = pool_of(&|v| block_of[v] * 2 + latent[v], cfg.components * 2);
        let by_comm = pool_of(&|v| community[v], n_comm);
        let by_comm_z = pool_of(&|v| community[v] * 2 + latent[v], n_comm * 2);
        let all = Pool::new((0..n).collect(), &weights);

        let mut etypes: Vec<usize> = quota_counts(target_edges, &cfg.edge_type_weights())
            .into_iter()
            .enumerate()
            .flat_map(|(t, c)| std::iter::repeat_n(t, c))
            .collect();
        etypes.shuffle(&mut rng);

        // Each community prefers one edge type, drawn by the type weights.
        let by_pref: Vec<Pool> = if cfg.type_locality > 0.0 {
            let w = cfg.edge_type_weights();
            let pick = WeightedIndex::new(&w).expect("positive weights");
            let pref: Vec<usize> = (0..n_comm).map(|_| pick.sample(&mut rng)).collect();
            pool_of(&|v| pref[community[v]], cfg.n_edge_types)
        } else {
            Vec::new()
        };

        let mut seen: HashSet<(NodeId, NodeId)> = HashSet::new();
        for t in etypes {
            for _attempt in 0..32 {
                let from = if cfg.type_locality > 0.0 && rng.random::<f64>() < cfg.type_locality {
                    by_pref.get(t).filter(|p| !p.is_empty()).unwrap_or(&all)
                } else {
                    &all
                };
                let Some(src) = from.draw(&mut rng) else { break };
                let local = rng.random::<f64>() < cfg.homophily;
                let z = if rng.random::<f64>() < cfg.latent_affinity {
                    Some(if t % 2 == 0 { latent[src] } else { 1 - latent[src] })
                } else {
                    None
                };
                let pool = match (local, z) {
                    (true, Some(z)) => &by_comm_z[community[src] * 2 + z],
                    (true, None) => &by_comm[community[src]],
                    (false, Some(z)) => &by_block_z[block_of[src] * 2 + z],
                    (false, None) => &by_block[block_of[src]],
                };
                let Some(dst) = pool.draw(&mut rng) else { continue };
                if dst == src {
                    continue;
                }
                let key = (src.min(dst), src.max(dst));
                if !seen.insert(key) {
                    continue;
                }
                b.add_edge(src, dst, EdgeTypeId(t as u16))
                    .map_err(|e| SynError::Infeasible(e.to_string()))?;
                break;
            }
        }
    }
    Ok(b.build())
}

/// Degree propensities from a discrete power law with exponential cutoff,
/// rescaled to the requested mean degree.
fn degree_propensities(cfg: &SynConfig, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let kmax = (cfg.n_nodes - 1).max(1);
    let mut cum = Vec::with_capacity(kmax);
    let mut acc = 0.0;
    for k in 1..=kmax {
        let kf = k as f64;
        acc += kf.powf(-cfg.degree_exponent) * (-kf / cfg.degree_cutoff.max(1e-9)).exp();
        cum.push(acc);
    }
    let raw: Vec<f64> = (0..cfg.n_nodes)
        .map(|_| {
            let r = rng.random::<f64>() * acc;
            (cum.partition_point(|&c| c <= r).min(kmax - 1) + 1) as f64
        })
        .collect();
    let mean = raw.iter().sum::<f64>() / raw.len() as f64;
    raw.into_iter().map(|w| w * cfg.mean_degree / mean).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskLevel {
    Node,
    Edge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    Binary,
    Regression,
}

/// A declared function of a node's typed neighborhood.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum LabelRule {
    /// Fraction of `etype`-neighbors whose `feature` exceeds `threshold`
    /// (zero when there are none).
    FractionAbove {
        etype: String,
        feature: usize,
        threshold: f64,
    },
    /// Mean of `feature` over `etype`-neighbors, or over all neighbors when
    /// `etype` is absent (zero when there are none).
    NeighborMean {
        etype: Option<String>,
        feature: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantedTask {
    pub level: TaskLevel,
    pub kind: TargetKind,
    pub rule: LabelRule,
    /// Binary: value above this is the positive class.
    #[serde(default)]
    pub cutoff: f64,
    /// Binary: flip probability. Regression: std of additive Gaussian noise.
    #[serde(default)]
    pub noise: f64,
    /// Restrict node targets to this node type.
    #[serde(default)]
    pub target_node_type: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Node(NodeId),
    Edge(EdgeId),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelTable {
    pub level: TaskLevel,
    pub kind: TargetKind,
    pub targets: Vec<Target>,
    pub values: Vec<f64>,
}

impl LabelTable {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Noise-free rule value at every node.
pub fn rule_values(g: &HetGraph, rule: &LabelRule) -> Result<Vec<f64>, SynError> {
    let reg = g.registry();
    let (set, feature): (Vec<EdgeTypeId>, usize) = match rule {
        LabelRule::FractionAbove { etype, feature, .. } => (
            vec![reg
                .edge_type_id(etype)
                .ok_or_else(|| SynError::UnknownType(etype.clone()))?],
            *feature,
        ),
        LabelRule::NeighborMean { etype, feature } => match etype {
            Some(e) => (
                vec![reg.edge_type_id(e).ok_or_else(|| SynError::UnknownType(e.clone()))?],
                *feature,
            ),
            None => (reg.all_edge_types(), *feature),
        },
    };
    for s in reg.node_types() {
        if feature >= s.dim {
            return Err(SynError::FeatureOutOfRange {
                index: feature,
                node_type: s.name.clone(),
                dim: s.dim,
            });
        }
    }
    let view = g.view();
    Ok((0..g.n_nodes())
        .map(|v| {
            let nb = view.neighbors_by_set(v, &set).expect("node in range");
            if nb.is_empty() {
                return 0.0;
            }
            let k = nb.len() as f64;
            match rule {
                LabelRule::FractionAbove { threshold, .. } => {
                    nb.iter().filter(|&&u| g.features(u)[feature] > *threshold).count() as f64 / k
                }
                LabelRule::NeighborMean { .. } => nb.iter().map(|&u| g.features(u)[feature]).sum::<f64>() / k,
            }
        })
        .collect())
}

/// Noise-free labels for the task, before any noise is applied.
pub fn oracle_labels(g: &HetGraph, task: &PlantedTask) -> Result<LabelTable, SynError> {
    let values = rule_values(g, &task.rule)?;
    let (targets, raw): (Vec<Target>, Vec<f64>) = match task.level {
        TaskLevel::Node => {
            let keep: Option<NodeTypeId> = match &task.target_node_type {
                Some(name) => Some(
                    g.registry()
                        .node_type_id(name)
                        .ok_or_else(|| SynError::UnknownType(name.clone()))?,
                ),
                None => None,
            };
            (0..g.n_nodes())
                .filter(|&v| keep.is_none_or(|t| g.node_type(v) == t))
                .map(|v| (Target::Node(v), values[v]))
                .unzip()
        }
        TaskLevel::Edge => g
            .edges()
            .iter()
            .enumerate()
            .map(|(e, ed)| (Target::Edge(e), 0.5 * (values[ed.src] + values[ed.dst])))
            .unzip(),
    };
    let values = match task.kind {
        TargetKind::Regression => raw,
        TargetKind::Binary => raw
            .into_iter()
            .map(|x| if x > task.cutoff { 1.0 } else { 0.0 })
            .collect(),
    };
    Ok(LabelTable {
        level: task.level,
        kind: task.kind,
        targets,
        values,
    })
}

/// Labels from the rule with noise applied deterministically in `seed`.
pub fn plant_labels(g: &HetGraph, task: &PlantedTask, seed: u64) -> Result<LabelTable, SynError> {
    let mut table = oracle_labels(g, task)?;
    if task.noise > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        match task.kind {
            TargetKind::Binary => {
                for y in &mut table.values {
                    if rng.random::<f64>() < task.noise {
                        *y = 1.0 - *y;
                    }
                }
            }
            TargetKind::Regression => {
                let noise = Normal::new(0.0, task.noise).map_err(|e| SynError::Infeasible(e.to_string()))?;
                for y in &mut table.values {
                    *y += noise.sample(&mut rng);
                }
            }
        }
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_isolated_node() {
        let cfg = SynConfig {
            n_nodes: 1,
            mean_degree: 0.0,
            ..Default::default()
        };
        let g = generate(&cfg).unwrap();
        assert_eq!((g.n_nodes(), g.n_edges()), (1, 0));
    }

    #[test]
    fn infeasible_degree_is_rejected() {
        let cfg = SynConfig {
            n_nodes: 5,
            mean_degree: 5.0,
            ..Default::default()
        };
        assert!(matches!(generate(&cfg), Err(SynError::Infeasible(_))));
    }

    #[test]
    fn uniform_types_split_evenly() {
        let cfg = SynConfig {
            n_nodes: 10_000,
            n_node_types: 2,
            node_type_skew: 0.0,
            mean_degree: 2.0,
            ..Default::default()
        };
        let g = generate(&cfg).unwrap();
        let c = g.node_type_counts();
        // 3 sigma of Binomial(10^4, 1/2) is 150.
        assert!(c.iter().all(|&k| (k as f64 - 5000.0).abs() <= 150.0), "{c:?}");
    }

    #[test]
    fn quota_rounding() {
        assert_eq!(quota_counts(10, &[0.5, 0.25, 0.25]), vec![5, 3, 2]);
        assert_eq!(quota_counts(7, &[1.0 / 3.0; 3]).iter().sum::<usize>(), 7);
    }

    #[test]
    fn neighbor_mean_by_hand() {
        let mut r = TypeRegistry::new();
        r.add_node_type("n", 1).unwrap();
        r.add_edge_type("a").unwrap();
        r.add_edge_type("b").unwrap();
        let mut b = GraphBuilder::new(r);
        for x in [1.0, 2.0, 4.0, 8.0] {
            b.add_anon_node(NodeTypeId(0), &[x]).unwrap();
        }
        b.add_edge(0, 1, EdgeTypeId(0)).unwrap();
        b.add_edge(0, 2, EdgeTypeId(0)).unwrap();
        b.add_edge(2, 3, EdgeTypeId(1)).unwrap();
        let g = b.build();
        let task = PlantedTask {
            level: TaskLevel::Node,
            kind: TargetKind::Regression,
            rule: LabelRule::NeighborMean {
                etype: None,
                feature: 0,
            },
            cutoff: 0.0,
            noise: 0.0,
            target_node_type: None,
        };
        let t = plant_labels(&g, &task, 0).unwrap();
        assert_eq!(t.values, vec![3.0, 1.0, 4.5, 4.0]);

        let frac = PlantedTask {
            rule: LabelRule::FractionAbove {
                etype: "a".into(),
                feature: 0,
                threshold: 1.5,
            },
            ..task
        };
        let t = plant_labels(&g, &frac, 0).unwrap();
        assert_eq!(t.values, vec![1.0, 0.0, 0.0, 0.0]);
    }
}
