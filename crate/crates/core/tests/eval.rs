use hetfm::eval::*;
use hetfm::hetgraph::{EdgeTypeId, GraphBuilder, HetGraph, NodeTypeId, TypeRegistry};
use hetfm::model::{write_checkpoint, ModelConfig, ModelParams};
use hetfm::numerics::Matrix;
use hetfm::pretrain::{component_split, pretrain, TrainConfig};
use hetfm::syngen::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Average precision by enumerating every threshold independently.
fn ap_oracle(scores: &[f64], labels: &[f64]) -> f64 {
    let pos = labels.iter().filter(|&&y| y > 0.5).count() as f64;
    let mut th: Vec<f64> = scores.to_vec();
    th.sort_by(|a, b| b.total_cmp(a));
    th.dedup();
    let mut prev_r = 0.0;
    let mut ap = 0.0;
    for t in th {
        let sel: Vec<usize> = (0..scores.len()).filter(|&i| scores[i] >= t).collect();
        let tp = sel.iter().filter(|&&i| labels[i] > 0.5).count() as f64;
        let r = tp / pos;
        let p = tp / sel.len() as f64;
        ap += (r - prev_r) * p;
        prev_r = r;
    }
    ap
}

fn scored() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (1usize..1000).prop_flat_map(|n| {
        (
            prop::collection::vec(0u32..200, n),
            prop::collection::vec(prop::bool::ANY, n),
        )
            .prop_filter("one positive", |(_, l)| l.iter().any(|&b| b))
            .prop_map(|(s, l)| {
                (
                    s.into_iter().map(|x| x as f64 / 7.0).collect(),
                    l.into_iter().map(|b| if b { 1.0 } else { 0.0 }).collect(),
                )
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn prauc_matches_threshold_enumeration((s, l) in scored()) {
        let got = prauc(&s, &l).unwrap();
        prop_assert!((got - ap_oracle(&s, &l)).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&got));
    }

    #[test]
    fn prauc_is_rank_invariant((s, l) in scored()) {
        let t: Vec<f64> = s.iter().map(|x| (x * 0.5).exp() - 3.0).collect();
        prop_assert_eq!(prauc(&s, &l).unwrap(), prauc(&t, &l).unwrap());
    }
}

#[test]
fn pca_recovers_planted_plane() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (u, v) = ([1.0, 2.0, -1.0], [0.5, -0.5, -0.5]);
    let rows: Vec<Vec<f64>> = (0..200)
        .map(|_| {
            let (a, b): (f64, f64) = (rng.random_range(-3.0..3.0), rng.random_range(-1.0..1.0));
            (0..3).map(|j| 4.0 + a * u[j] + b * v[j]).collect()
        })
        .collect();
    let x = Matrix::from_rows(&rows).unwrap();
    let p = pca2(&x).unwrap();
    assert!(p.variance[0] >= p.variance[1]);
    let mut err: f64 = 0.0;
    for (i, row) in rows.iter().enumerate() {
        for j in 0..3 {
            let rec = p.mean[j] + p.coords[i][0] * p.axes[0][j] + p.coords[i][1] * p.axes[1][j];
            err = err.max((rec - row[j]).abs());
        }
    }
    assert!(err < 1e-9, "{err}");
}

fn tiny_grid(epochs: usize) -> ProbeGrid {
    ProbeGrid {
        layers: vec![1],
        hidden: vec![8],
        dropout: vec![0.0],
        lr: vec![0.02],
        epochs,
        patience: 50,
        seeds: 1,
    }
}

fn gaussian(n: usize, d: usize, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v: Vec<f64> = (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
    Matrix::from_vec(n, d, v).unwrap()
}

#[test]
fn planted_linear_task_is_solved() {
    let x = gaussian(500, 6, 3);
    let y: Vec<f64> = (0..500).map(|i| if x.get(i, 2) > 0.1 { 1.0 } else { 0.0 }).collect();
    let data = Dataset::new(x, y, TargetKind::Binary).unwrap();
    let split = split_indices(500, 0.8, 0.1, 0).unwrap();
    let r = probe(&data, &split, &tiny_grid(400), 0).unwrap();
    assert!(r.test_mean > 0.99, "{}", r.test_mean);
    let seed = hetfm::hetgraph::sample_seed(0, r.selected as u64, 0);
    let again = train_probe(&data, &split, r.config, 400, 50, seed).unwrap();
    assert_eq!(again, r.cells[r.selected].runs[0]);
    assert_eq!(again.test, r.test_mean);
    let rerun = probe(&data, &split, &tiny_grid(400), 0).unwrap();
    assert_eq!(rerun, r);
}

#[test]
fn random_labels_give_class_rate() {
    let mut total = 0.0;
    let mut rate = 0.0;
    for seed in 0..5 {
        let x = gaussian(3000, 4, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let y: Vec<f64> = (0..3000).map(|_| if rng.random_bool(0.3) { 1.0 } else { 0.0 }).collect();
        let data = Dataset::new(x, y.clone(), TargetKind::Binary).unwrap();
        let split = split_indices(3000, 0.8, 0.1, seed).unwrap();
        total += probe(&data, &split, &tiny_grid(100), seed).unwrap().test_mean;
        rate += class_rate(&split.test.iter().map(|&i| y[i]).collect::<Vec<_>>());
    }
    assert!((total / 5.0 - rate / 5.0).abs() < 0.05, "{} vs {}", total / 5.0, rate / 5.0);
}

#[test]
fn regression_probe_reports_mae() {
    let x = gaussian(400, 3, 9);
    let y: Vec<f64> = (0..400).map(|i| 2.0 * x.get(i, 0) - x.get(i, 1)).collect();
    let data = Dataset::new(x, y, TargetKind::Regression).unwrap();
    let split = split_indices(400, 0.8, 0.1, 1).unwrap();
    let r = probe(&data, &split, &tiny_grid(600), 0).unwrap();
    assert!(r.test_mean < 0.05, "{}", r.test_mean);
}

#[test]
fn few_shot_degenerate_and_deterministic() {
    let x = gaussian(200, 4, 5);
    let y: Vec<f64> = (0..200).map(|i| (i % 2) as f64).collect();
    let data = Dataset::new(x, y, TargetKind::Binary).unwrap();
    let split = split_indices(200, 0.8, 0.1, 2).unwrap();
    let per_class = split.train.iter().filter(|&&i| data.y[i] > 0.5).count();
    let neg = split.train.len() - per_class;
    let a = few_shot_ids(&data, &split.train, 3, 7).unwrap();
    assert_eq!(a, few_shot_ids(&data, &split.train, 3, 7).unwrap());
    assert_eq!(a.len(), 6);
    assert!(matches!(
        few_shot_ids(&data, &split.train, per_class.max(neg) + 1, 7),
        Err(EvalError::NotEnoughExamples { .. })
    ));
    if per_class == neg {
        let full = few_shot(&data, &split, per_class, &tiny_grid(50), 3).unwrap();
        assert_eq!(full, probe(&data, &split, &tiny_grid(50), 3).unwrap());
    }
    let mut balanced = split.clone();
    let pos: Vec<usize> = split.train.iter().copied().filter(|&i| data.y[i] > 0.5).take(neg.min(per_class)).collect();
    let negs: Vec<usize> = split.train.iter().copied().filter(|&i| data.y[i] < 0.5).take(neg.min(per_class)).collect();
    balanced.train = split.train.iter().copied().filter(|i| pos.contains(i) || negs.contains(i)).collect();
    let k = neg.min(per_class);
    let full = few_shot(&data, &balanced, k, &tiny_grid(50), 3).unwrap();
    assert_eq!(full, probe(&data, &balanced, &tiny_grid(50), 3).unwrap());
}

#[test]
fn one_shot_beats_class_rate() {
    let mut wins = 0;
    for seed in 0..10 {
        let x = gaussian(400, 2, seed);
        let y: Vec<f64> = (0..400).map(|i| if x.get(i, 0) > 0.0 { 1.0 } else { 0.0 }).collect();
        let data = Dataset::new(x, y.clone(), TargetKind::Binary).unwrap();
        let split = split_indices(400, 0.8, 0.1, seed).unwrap();
        let r = few_shot(&data, &split, 1, &tiny_grid(100), seed).unwrap();
        let rate = class_rate(&split.test.iter().map(|&i| y[i]).collect::<Vec<_>>());
        if r.test_mean > rate {
            wins += 1;
        }
    }
    assert!(wins >= 8, "{wins}/10");
}

fn line_graph() -> HetGraph {
    let mut r = TypeRegistry::new();
    r.add_node_type("n", 2).unwrap();
    r.add_edge_type("e").unwrap();
    let mut b = GraphBuilder::new(r);
    for i in 0..5 {
        b.add_anon_node(NodeTypeId(0), &[i as f64, 1.0]).unwrap();
    }
    for i in 0..4 {
        b.add_edge(i, i + 1, EdgeTypeId(0)).unwrap();
    }
    b.build()
}

#[test]
fn zero_radius_sees_only_own_features() {
    let g = line_graph();
    let mut r = TypeRegistry::new();
    r.add_node_type("n", 2).unwrap();
    r.add_edge_type("e").unwrap();
    let mut b = GraphBuilder::new(r);
    b.add_anon_node(NodeTypeId(0), &[0.0, 1.0]).unwrap();
    b.add_anon_node(NodeTypeId(0), &[9.0, -4.0]).unwrap();
    b.add_edge(0, 1, EdgeTypeId(0)).unwrap();
    let h = b.build();
    let p = ModelParams::init(ModelConfig::new(g.registry().clone(), 2, 4, 2), 3).unwrap();
    let opts = EmbedOptions { k: 0, ..Default::default() };
    let a = embed_frozen(&p, &g, &[Target::Node(0)], &opts).unwrap();
    let b = embed_frozen(&p, &h, &[Target::Node(0)], &opts).unwrap();
    assert_eq!(a, b);
    let wide = EmbedOptions { k: 1, ..Default::default() };
    assert_ne!(embed_frozen(&p, &g, &[Target::Node(0)], &wide).unwrap(), embed_frozen(&p, &h, &[Target::Node(0)], &wide).unwrap());
}

#[test]
fn embedding_is_frozen_and_deterministic() {
    let g = line_graph();
    let p = ModelParams::init(ModelConfig::new(g.registry().clone(), 1, 4, 1), 0).unwrap();
    let before = write_checkpoint(&p);
    let targets = [Target::Node(1), Target::Node(3)];
    let a = embed_frozen(&p, &g, &targets, &EmbedOptions::default()).unwrap();
    let b = embed_frozen(&p, &g, &targets, &EmbedOptions { chunk: 1, ..Default::default() }).unwrap();
    assert_eq!(a, b);
    assert_eq!(write_checkpoint(&p), before);
    let e = embed_frozen(&p, &g, &[Target::Edge(0)], &EmbedOptions::default()).unwrap();
    assert_eq!(e.shape(), (1, 8));
    assert_eq!(&e.row(0)[..4], &embed_frozen(&p, &g, &[Target::Node(0)], &EmbedOptions { k: 2, ..Default::default() }).unwrap().row(0)[..4]);
}

fn family(seed: u64) -> SynConfig {
    SynConfig {
        n_nodes: 2000,
        n_node_types: 2,
        n_edge_types: 2,
        mean_degree: 6.0,
        degree_cutoff: 40.0,
        feature_dims: vec![4],
        components: 8,
        community_signal: 1.0,
        seed,
        ..SynConfig::default()
    }
}

fn pretrained(g: &HetGraph) -> ModelParams {
    let mut cfg = ModelConfig::new(g.registry().clone(), 1, 16, 2);
    cfg.neighborhood.taa_hops = 1;
    cfg.neighborhood.taa_cap = 6;
    let split = component_split(g, 0.15, 0).unwrap();
    let tc = TrainConfig {
        data_size: 3000,
        step_batch: 256,
        epochs: 4,
        lr: 5e-3,
        storage_budget: 4000.0,
        val_edges: 512,
        ..TrainConfig::default()
    };
    pretrain(g, &tc, ModelParams::init(cfg, 1).unwrap(), &split, None).unwrap().best
}

#[test]
fn zero_shot_links_in_family_and_null() {
    let g = generate(&family(1)).unwrap();
    let p = pretrained(&g);
    let task_graph = generate(&family(2)).unwrap();
    let edges: Vec<usize> = (0..task_graph.n_edges()).step_by(15).collect();
    let task = LinkTask::from_edges(&task_graph, &edges, 1, 4);
    let opts = EmbedOptions { k: 1, ..Default::default() };
    let r = zero_shot_links(&p, &task_graph, TaskLevel::Edge, &task, &opts).unwrap();
    assert!(r.prauc > r.class_rate + 0.05, "{} vs {}", r.prauc, r.class_rate);
    let null = zero_shot_links(&p, &task_graph, TaskLevel::Edge, &task.shuffled(5), &opts).unwrap();
    assert!((null.prauc - null.class_rate).abs() < 0.05, "{} vs {}", null.prauc, null.class_rate);
    assert_eq!(
        zero_shot_links(&p, &task_graph, TaskLevel::Node, &task, &opts),
        Err(EvalError::NodeLevelZeroShot)
    );
}

#[test]
fn structure_probe_beats_raw_features() {
    let p = pretrained(&generate(&family(1)).unwrap());
    let task = PlantedTask {
        level: TaskLevel::Node,
        kind: TargetKind::Binary,
        rule: LabelRule::FractionAbove {
            etype: "r0".into(),
            feature: 0,
            threshold: 0.0,
        },
        cutoff: 0.5,
        noise: 0.0,
        target_node_type: None,
    };
    let mut wins = 0;
    let mut log = Vec::new();
    for seed in 0..10 {
        let g = generate(&family(100 + seed)).unwrap();
        let labels = plant_labels(&g, &task, seed).unwrap();
        let split = split_indices(labels.len(), 0.8, 0.1, seed).unwrap();
        let opts = EmbedOptions { k: 1, seed, ..Default::default() };
        let emb = Dataset::new(embed_frozen(&p, &g, &labels.targets, &opts).unwrap(), labels.values.clone(), TargetKind::Binary).unwrap();
        let raw = Dataset::new(raw_features(&g, &labels.targets), labels.values.clone(), TargetKind::Binary).unwrap();
        let a = probe(&emb, &split, &tiny_grid(300), seed).unwrap().test_mean;
        let b = probe(&raw, &split, &tiny_grid(300), seed).unwrap().test_mean;
        log.push((a, b));
        if a > b {
            wins += 1;
        }
    }
    assert!(wins >= 8, "{wins}/10 {log:?}");
}
