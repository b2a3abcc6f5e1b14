use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::cluster::{normalize, Cluster};
use super::BatchError;

/// `KL(p_k || p_G)` in nats with `0 log 0 = 0`.
pub fn kl(pk: &[f64], pg: &[f64]) -> Result<f64, BatchError> {
    if pk.len() != pg.len() {
        return Err(BatchError::LengthMismatch {
            left: pk.len(),
            right: pg.len(),
        });
    }
    let mut sum = 0.0;
    for (t, (&p, &q)) in pk.iter().zip(pg).enumerate() {
        if p == 0.0 {
            continue;
        }
        if q == 0.0 {
            return Err(BatchError::Support { index: t });
        }
        sum += p * (p / q).ln();
    }
    // Rounding can leave a tiny negative value when p_k = p_G.
    Ok(sum.max(0.0))
}

/// Weighted sum of per-attribute divergences.
pub fn kl_weighted(kappas: &[f64], weights: &[f64]) -> Result<f64, BatchError> {
    if kappas.len() != weights.len() {
        return Err(BatchError::LengthMismatch {
            left: kappas.len(),
            right: weights.len(),
        });
    }
    let total: f64 = weights.iter().sum();
    if weights.iter().any(|w| !(*w >= 0.0)) || (total - 1.0).abs() > 1e-12 {
        return Err(BatchError::Weights);
    }
    Ok(kappas.iter().zip(weights).map(|(k, w)| k * w).sum())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PackVariant {
    /// Close the open batch as soon as the next cluster does not fit.
    #[default]
    Sequential,
    /// Put each cluster in the first batch with room.
    FirstFit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StorageBatch {
    /// Cluster ids in insertion order.
    pub clusters: Vec<usize>,
    pub cost: f64,
    pub mean_kappa: f64,
    /// Pooled node-type distribution of the member clusters.
    pub node_dist: Vec<f64>,
    /// Pooled distribution of cluster-internal edge types.
    pub edge_dist: Vec<f64>,
}

impl StorageBatch {
    pub fn nodes(&self, clusters: &[Cluster]) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .clusters
            .iter()
            .flat_map(|&k| clusters[k].members.iter().copied())
            .collect();
        out.sort_unstable();
        out
    }
}

fn finish(ids: Vec<usize>, clusters: &[Cluster]) -> StorageBatch {
    let nn = clusters.first().map_or(0, |c| c.node_counts.len());
    let ne = clusters.first().map_or(0, |c| c.edge_counts.len());
    let mut nc = vec![0; nn];
    let mut ec = vec![0; ne];
    let mut cost = 0.0;
    let mut kappa = 0.0;
    for &k in &ids {
        let c = &clusters[k];
        cost += c.cost;
        kappa += c.kappa;
        nc.iter_mut().zip(&c.node_counts).for_each(|(a, b)| *a += b);
        ec.iter_mut().zip(&c.edge_counts).for_each(|(a, b)| *a += b);
    }
    StorageBatch {
        mean_kappa: kappa / ids.len() as f64,
        clusters: ids,
        cost,
        node_dist: normalize(&nc).unwrap_or_default(),
        edge_dist: normalize(&ec).unwrap_or_default(),
    }
}

fn check(clusters: &[Cluster], budget: f64) -> Result<(), BatchError> {
    if !(budget > 0.0) {
        return Err(BatchError::Config("budget must be positive".into()));
    }
    for (i, c) in clusters.iter().enumerate() {
        if c.id != i {
            return Err(BatchError::Config(format!("cluster at position {i} has id {}", c.id)));
        }
        if c.cost > budget {
            return Err(BatchError::Unpackable {
                cluster: c.id,
                cost: c.cost,
                budget,
            });
        }
    }
    Ok(())
}

fn pack_in_order(order: &[usize], clusters: &[Cluster], budget: f64, variant: PackVariant) -> Vec<Vec<usize>> {
    let mut batches: Vec<(Vec<usize>, f64)> = Vec::new();
    for &k in order {
        let s = clusters[k].cost;
        let slot = match variant {
            PackVariant::Sequential => batches.last().filter(|b| b.1 + s <= budget).map(|_| batches.len() - 1),
            PackVariant::FirstFit => batches.iter().position(|b| b.1 + s <= budget),
        };
        match slot {
            Some(i) => {
                batches[i].0.push(k);
                batches[i].1 += s;
            }
            None => batches.push((vec![k], s)),
        }
    }
    batches.into_iter().map(|b| b.0).collect()
}

/// Packs whole clusters in ascending `κ` (ties: larger cost first, then id).
/// Batches are returned in ascending mean `κ`.
pub fn kl_batch(clusters: &[Cluster], budget: f64, variant: PackVariant) -> Result<Vec<StorageBatch>, BatchError> {
    check(clusters, budget)?;
    let mut order: Vec<usize> = (0..clusters.len()).collect();
    order.sort_by(|&a, &b| {
        let (ca, cb) = (&clusters[a], &clusters[b]);
        ca.kappa
            .total_cmp(&cb.kappa)
            .then(cb.cost.total_cmp(&ca.cost))
            .then(a.cmp(&b))
    });
    let mut out: Vec<StorageBatch> = pack_in_order(&order, clusters, budget, variant)
        .into_iter()
        .map(|ids| finish(ids, clusters))
        .collect();
    out.sort_by(|a, b| a.mean_kappa.total_cmp(&b.mean_kappa));
    Ok(out)
}

/// Baseline: the same sequential packing over a seeded random cluster order.
pub fn random_pack(clusters: &[Cluster], budget: f64, seed: u64) -> Result<Vec<StorageBatch>, BatchError> {
    check(clusters, budget)?;
    let mut order: Vec<usize> = (0..clusters.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(pack_in_order(&order, clusters, budget, PackVariant::Sequential)
        .into_iter()
        .map(|ids| finish(ids, clusters))
        .collect())
}

/// The leading batches whose cumulative cost first reaches `load`: what a
/// run that only trains on part of the population actually reads.
pub fn leading_batches(batches: &[StorageBatch], load: f64) -> &[StorageBatch] {
    let mut acc = 0.0;
    for (i, b) in batches.iter().enumerate() {
        acc += b.cost;
        if acc >= load {
            return &batches[..=i];
        }
    }
    batches
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub id: usize,
    pub nodes: usize,
    pub cost: f64,
    pub kappa: f64,
}

/// Audit record of a packing run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchManifest {
    pub budget: f64,
    pub variant: PackVariant,
    pub clusters: Vec<ClusterSummary>,
    pub batches: Vec<StorageBatch>,
}

impl BatchManifest {
    pub fn new(budget: f64, variant: PackVariant, clusters: &[Cluster], batches: Vec<StorageBatch>) -> Self {
        Self {
            budget,
            variant,
            clusters: clusters
                .iter()
                .map(|c| ClusterSummary {
                    id: c.id,
                    nodes: c.members.len(),
                    cost: c.cost,
                    kappa: c.kappa,
                })
                .collect(),
            batches,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clusters(costs: &[f64], kappas: &[f64]) -> Vec<Cluster> {
        costs
            .iter()
            .zip(kappas)
            .enumerate()
            .map(|(id, (&cost, &kappa))| Cluster {
                id,
                members: vec![id],
                cost,
                node_counts: vec![1],
                edge_counts: vec![0],
                kappa,
            })
            .collect()
    }

    #[test]
    fn kl_examples() {
        assert_eq!(kl(&[0.5, 0.5], &[0.5, 0.5]).unwrap(), 0.0);
        let want = 1.0 * (1.0f64 / 0.5).ln();
        assert!((kl(&[1.0, 0.0], &[0.5, 0.5]).unwrap() - want).abs() < 1e-15);
        assert_eq!(kl(&[0.5, 0.5], &[1.0, 0.0]), Err(BatchError::Support { index: 1 }));
    }

    #[test]
    fn weighted_examples() {
        assert_eq!(kl_weighted(&[0.7], &[1.0]).unwrap(), 0.7);
        assert!((kl_weighted(&[0.2, 0.4], &[0.5, 0.5]).unwrap() - 0.3).abs() < 1e-15);
        assert_eq!(kl_weighted(&[0.2, 0.4], &[0.0, 1.0]).unwrap(), 0.4);
        assert!(kl_weighted(&[0.2], &[0.5, 0.5]).is_err());
        assert!(kl_weighted(&[0.2, 0.1], &[0.5, 0.6]).is_err());
    }

    #[test]
    fn hand_trace_six_five_four() {
        let c = clusters(&[6.0, 5.0, 4.0], &[0.1, 0.2, 0.3]);
        let b = kl_batch(&c, 10.0, PackVariant::Sequential).unwrap();
        let ids: Vec<_> = b.iter().map(|b| b.clusters.clone()).collect();
        assert_eq!(ids, vec![vec![0], vec![1, 2]]);
    }

    #[test]
    fn everything_fits_in_one() {
        let c = clusters(&[1.0, 2.0, 3.0], &[0.3, 0.2, 0.1]);
        let b = kl_batch(&c, 6.0, PackVariant::Sequential).unwrap();
        assert_eq!(b.len(), 1);
        assert_eq!(b[0].clusters, vec![2, 1, 0]);
    }

    #[test]
    fn ties_prefer_larger_then_id() {
        let c = clusters(&[1.0, 3.0, 3.0], &[0.0, 0.0, 0.0]);
        let b = kl_batch(&c, 100.0, PackVariant::Sequential).unwrap();
        assert_eq!(b[0].clusters, vec![1, 2, 0]);
    }

    #[test]
    fn oversize_cluster_is_reported() {
        let c = clusters(&[1.0, 11.0], &[0.0, 0.0]);
        assert!(matches!(
            kl_batch(&c, 10.0, PackVariant::Sequential),
            Err(BatchError::Unpackable { cluster: 1, .. })
        ));
    }

    #[test]
    fn first_fit_backfills() {
        let c = clusters(&[6.0, 5.0, 4.0], &[0.1, 0.2, 0.3]);
        let b = kl_batch(&c, 10.0, PackVariant::FirstFit).unwrap();
        let ids: Vec<_> = b.iter().map(|b| b.clusters.clone()).collect();
        assert_eq!(ids, vec![vec![0, 2], vec![1]]);
    }
}
