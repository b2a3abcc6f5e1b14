mod common;

use common::registry;
use hetfm::model::{ModelConfig, ModelParams};
use hetfm::pretrain::{component_split, pretrain, TrainConfig};
use hetfm::scaling::*;
use hetfm::syngen::{generate, SynConfig};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

const TRUTH: (f64, f64, f64, f64, f64) = (1.0, 1e4, 0.7, 5.0, 0.2);

fn law(p: (f64, f64, f64, f64, f64), n: f64, d: f64) -> f64 {
    p.0 + (p.1 / n).powf(p.2) + (p.3 / d).powf(p.4)
}

fn grid(p: (f64, f64, f64, f64, f64), noise: f64, seed: u64) -> Vec<ScalingObservation> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = Normal::new(0.0, 1.0).unwrap();
    let mut obs = Vec::new();
    for n in log_ladder(1e3, 1e7, 9) {
        for d in log_ladder(1e2, 1e6, 8) {
            let eps: f64 = z.sample(&mut rng);
            obs.push(ScalingObservation::new(n, d, law(p, n, d) * (1.0 + noise * eps)));
        }
    }
    obs
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

#[test]
fn noise_free_grid_recovers_all_parameters() {
    let fit = fit_joint(&grid(TRUTH, 0.0, 0), &FitOptions::default()).unwrap();
    let got = [fit.l_inf, fit.n_c, fit.alpha_n, fit.d_c, fit.alpha_d];
    let want = [TRUTH.0, TRUTH.1, TRUTH.2, TRUTH.3, TRUTH.4];
    for (g, w) in got.iter().zip(want) {
        assert!(rel(*g, w) < 0.01, "{got:?} vs {want:?}");
    }
    assert!(fit.rss < 1e-20);
}

#[test]
fn refitting_a_fitted_curve_is_idempotent() {
    let obs = grid(TRUTH, 0.01, 3);
    let first = fit_joint(&obs, &FitOptions::default()).unwrap();
    let resampled: Vec<_> = obs
        .iter()
        .map(|o| ScalingObservation::new(o.n, o.d, first.eval(o.n, o.d)))
        .collect();
    let second = fit_joint(&resampled, &FitOptions { seed: 9, ..FitOptions::default() }).unwrap();
    for (a, b) in [
        (first.l_inf, second.l_inf),
        (first.n_c, second.n_c),
        (first.alpha_n, second.alpha_n),
        (first.d_c, second.d_c),
        (first.alpha_d, second.alpha_d),
    ] {
        assert!(rel(b, a) < 1e-9, "{first:?} vs {second:?}");
    }
}

#[test]
fn constant_losses_put_everything_in_the_floor() {
    let obs: Vec<_> = grid(TRUTH, 0.0, 0)
        .into_iter()
        .map(|o| ScalingObservation::new(o.n, o.d, 0.8))
        .collect();
    let fit = fit_joint(&obs, &FitOptions::default()).unwrap();
    assert!(rel(fit.l_inf, 0.8) < 1e-6, "{fit:?}");
    for o in &obs {
        assert!(fit.n_term(o.n) + fit.d_term(o.d) < 1e-6);
    }
}

#[test]
fn exponents_survive_one_percent_noise() {
    let ok = (0..20)
        .filter(|&t| {
            let fit = fit_joint(&grid(TRUTH, 0.01, 100 + t), &FitOptions::default()).unwrap();
            rel(fit.alpha_n, TRUTH.2) < 0.1 && rel(fit.alpha_d, TRUTH.4) < 0.1
        })
        .count();
    assert!(ok >= 18, "{ok}/20");
}

#[test]
fn fit_is_reproducible_in_seed() {
    let obs = grid(TRUTH, 0.02, 5);
    let a = fit_joint(&obs, &FitOptions::default()).unwrap();
    let b = fit_joint(&obs, &FitOptions::default()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn exact_power_law_slope() {
    let obs: Vec<_> = log_ladder(1e3, 1e6, 7)
        .into_iter()
        .map(|n| ScalingObservation::new(n, 1e5, (2.1e4 / n).powf(0.703)))
        .chain([ScalingObservation::new(1e3, 10.0, 9.0)])
        .collect();
    let p = fit_power_n(&obs, 0.0).unwrap();
    assert_eq!(p.points, 7);
    assert!((p.exponent - 0.703).abs() < 1e-10);
    assert!(rel(p.scale, 2.1e4) < 1e-9);

    let obs: Vec<_> = log_ladder(1e3, 1e5, 5)
        .into_iter()
        .map(|d| ScalingObservation::new(1e6, d, 0.5 + (4.7 / d).powf(0.188)))
        .collect();
    let p = fit_power_d(&obs, 0.5).unwrap();
    assert!((p.exponent - 0.188).abs() < 1e-10);
}

#[test]
fn noisy_power_law_slope() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let z = Normal::new(0.0, 0.02).unwrap();
    let obs: Vec<_> = log_ladder(1e2, 1e6, 20)
        .into_iter()
        .map(|d| ScalingObservation::new(1.0, d, (10.0 / d).powf(0.5) * (1.0 + z.sample(&mut rng))))
        .collect();
    let p = fit_power_d(&obs, 0.0).unwrap();
    assert!((p.exponent - 0.5).abs() < 0.05, "{p:?}");
}

proptest! {
    #[test]
    fn law_is_monotone(
        l in 0.0f64..2.0, nc in 1.0f64..1e6, an in 0.01f64..2.0, dc in 1.0f64..1e6, ad in 0.01f64..2.0,
        n in 1.0f64..1e8, d in 1.0f64..1e8, kn in 1.0f64..100.0, kd in 1.0f64..100.0,
    ) {
        let fit = ScalingFit { l_inf: l, n_c: nc, alpha_n: an, d_c: dc, alpha_d: ad, rss: 0.0, residuals: vec![] };
        prop_assert!(fit.eval(n * kn, d) <= fit.eval(n, d));
        prop_assert!(fit.eval(n, d * kd) <= fit.eval(n, d));
    }
}

#[test]
fn plot_data_round_trips_and_reevaluates() {
    let dir = tempfile::tempdir().unwrap();
    let obs = grid(TRUTH, 0.01, 1);
    let fit = fit_joint(&obs, &FitOptions::default()).unwrap();
    let files = emit_plot_data(&obs, &fit, 5, dir.path()).unwrap();
    assert_eq!(read_observations(&files.observations).unwrap(), obs);

    let mut r = csv::Reader::from_path(&files.curves).unwrap();
    let curves: Vec<CurvePoint> = r.deserialize().map(|c| c.unwrap()).collect();
    assert_eq!(curves.len(), 5 * (8 + 9));
    for c in &curves {
        assert_eq!(c.loss, law((fit.l_inf, fit.n_c, fit.alpha_n, fit.d_c, fit.alpha_d), c.n, c.d));
    }
    let back: ScalingFit = serde_json::from_reader(std::fs::File::open(&files.fit).unwrap()).unwrap();
    assert_eq!(back, fit);

    let empty = emit_plot_data(&obs, &fit, 0, &dir.path().join("empty")).unwrap();
    assert_eq!(std::fs::read_to_string(empty.curves).unwrap(), "axis,n,d,loss\n");
}

#[test]
fn ladder_hits_reference_sizes() {
    let template = ModelConfig::new(registry(&[16; 12], 20), 1, 64, 8);
    let rungs = model_ladder(&template, &REFERENCE_MODEL_SIZES, 64).unwrap();
    for r in &rungs {
        assert!(r.rel_error() <= 0.02, "{} vs {}", r.params, r.target);
        assert_eq!(r.config.d_model % 8, 0);
        r.config.validate().unwrap();
    }
    let desk = model_ladder(&ModelConfig::new(registry(&[4, 4], 3), 1, 8, 1), &log_ladder(1e3, 1e6, 4), 8).unwrap();
    for r in &desk {
        assert!(r.rel_error() <= 0.05, "{} vs {}", r.params, r.target);
    }
}

#[test]
fn single_cell_sweep_equals_direct_pretrain() {
    let g = generate(&SynConfig {
        n_nodes: 900,
        n_node_types: 2,
        n_edge_types: 3,
        mean_degree: 6.0,
        degree_cutoff: 30.0,
        feature_dims: vec![4],
        components: 6,
        seed: 3,
        ..SynConfig::default()
    })
    .unwrap();
    let split = component_split(&g, 0.2, 0).unwrap();
    let mut model = ModelConfig::new(g.registry().clone(), 1, 8, 2);
    model.neighborhood.taa_hops = 1;
    model.neighborhood.taa_cap = 4;
    let train = TrainConfig {
        epochs: 2,
        step_batch: 128,
        storage_budget: 3000.0,
        val_edges: 256,
        ..TrainConfig::default()
    };
    let cfg = SweepConfig {
        data_sizes: vec![500],
        lrs: vec![5e-3],
        seeds: vec![7],
        train: train.clone(),
    };
    let out = sweep(&g, &split, std::slice::from_ref(&model), &cfg).unwrap();
    assert_eq!(out.observations.len(), 1);
    assert!(out.diverged.is_empty());

    let direct_cfg = TrainConfig {
        data_size: 500,
        lr: 5e-3,
        seed: 7,
        ..train
    };
    let direct = pretrain(&g, &direct_cfg, ModelParams::init(model, 7).unwrap(), &split, None).unwrap();
    assert_eq!(out.observations[0].loss, direct.best_val());
    assert_eq!(out.observations[0].d, 500.0);
}
