use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{mae, prauc};
use super::EvalError;
use crate::hetgraph::sample_seed;
use crate::numerics::{adam_step, AdamConfig, Matrix, OptimizerState, ParamId, ParamStore, Tape, Var};
use crate::syngen::TargetKind;

/// Inputs and labels of a probing task.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Matrix,
    pub y: Vec<f64>,
    pub kind: TargetKind,
}

impl Dataset {
    pub fn new(x: Matrix, y: Vec<f64>, kind: TargetKind) -> Result<Self, EvalError> {
        if x.rows() != y.len() {
            return Err(EvalError::LengthMismatch {
                left: x.rows(),
                right: y.len(),
            });
        }
        Ok(Self { x, y, kind })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

/// Disjoint, exhaustive train/validation/test index sets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded random split with the given train and validation fractions; the
/// remainder is test.
pub fn split_indices(n: usize, train: f64, val: f64, seed: u64) -> Result<Split, EvalError> {
    if !(train > 0.0 && val >= 0.0 && train + val < 1.0) {
        return Err(EvalError::Config("split fractions must be positive and leave a test set".into()));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let a = (train * n as f64).round() as usize;
    let b = a + (val * n as f64).round() as usize;
    let b = b.min(n);
    Ok(Split {
        train: idx[..a].to_vec(),
        val: idx[a..b].to_vec(),
        test: idx[b..].to_vec(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    /// 1 is a linear probe; 2 adds one ReLU hidden layer.
    pub layers: usize,
    pub hidden: usize,
    pub dropout: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeGrid {
    pub layers: Vec<usize>,
    pub hidden: Vec<usize>,
    pub dropout: Vec<f64>,
    pub lr: Vec<f64>,
    pub epochs: usize,
    pub patience: usize,
    pub seeds: usize,
}

impl Default for ProbeGrid {
    fn default() -> Self {
        Self {
            layers: vec![1, 2],
            hidden: vec![64, 128, 256],
            dropout: vec![0.0, 0.2, 0.6],
            lr: vec![0.001, 0.0001, 0.0005],
            epochs: 1000,
            patience: 200,
            seeds: 3,
        }
    }
}

impl ProbeGrid {
    /// Every combination, hidden width included even for linear probes.
    pub fn cells(&self) -> Vec<ProbeConfig> {
        let mut out = Vec::new();
        for &layers in &self.layers {
            for &hidden in &self.hidden {
                for &dropout in &self.dropout {
                    for &lr in &self.lr {
                        out.push(ProbeConfig {
                            layers,
                            hidden,
                            dropout,
                            lr,
                        });
                    }
                }
            }
        }
        out
    }

    pub fn len(&self) -> usize {
        self.layers.len() * self.hidden.len() * self.dropout.len() * self.lr.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn validate(&self) -> Result<(), EvalError> {
        if self.is_empty() || self.epochs == 0 || self.seeds == 0 {
            return Err(EvalError::Config("grid, epochs and seeds must be nonempty".into()));
        }
        for c in self.cells() {
            if !(1..=2).contains(&c.layers) || c.hidden == 0 || !(0.0..1.0).contains(&c.dropout) || !(c.lr > 0.0) {
                return Err(EvalError::Config(format!("invalid probe config {c:?}")));
            }
        }
        Ok(())
    }
}

/// Higher is better for PRAUC; MAE is negated so the same holds.
fn score(kind: TargetKind, preds: &[f64], y: &[f64]) -> Result<f64, EvalError> {
    match kind {
        TargetKind::Binary => prauc(preds, y),
        TargetKind::Regression => Ok(-mae(preds, y)?),
    }
}

fn report(kind: TargetKind, s: f64) -> f64 {
    match kind {
        TargetKind::Binary => s,
        TargetKind::Regression => -s,
    }
}

struct Mlp {
    store: ParamStore,
    ids: Vec<ParamId>,
    cfg: ProbeConfig,
}

impl Mlp {
    fn new(d: usize, cfg: ProbeConfig, rng: &mut ChaCha8Rng) -> Self {
        let mut store = ParamStore::new();
        let mut dense = |name: &str, r: usize, c: usize, store: &mut ParamStore| {
            let a = 1.0 / (r.max(1) as f64).sqrt();
            let w = Matrix::from_vec(r, c, (0..r * c).map(|_| rng.random_range(-a..=a)).collect()).expect("sized");
            let w = store.insert(format!("{name}.w"), w).expect("fresh");
            let b = store.insert(format!("{name}.b"), Matrix::zeros(1, c)).expect("fresh");
            [w, b]
        };
        let ids = if cfg.layers == 1 {
            dense("out", d, 1, &mut store).to_vec()
        } else {
            let mut v = dense("hid", d, cfg.hidden, &mut store).to_vec();
            v.extend(dense("out", cfg.hidden, 1, &mut store));
            v
        };
        Self { store, ids, cfg }
    }

    fn forward(&self, tape: &mut Tape, x: Var, dropout: Option<&mut ChaCha8Rng>) -> Var {
        let p: Vec<Var> = self.ids.iter().map(|&id| tape.param(id, self.store.get(id))).collect();
        let mut h = x;
        if self.cfg.layers == 2 {
            h = tape.matmul(h, p[0]);
            h = tape.add_row(h, p[1]);
            h = tape.relu(h);
            if let Some(rng) = dropout.filter(|_| self.cfg.dropout > 0.0) {
                let (r, c) = tape.value(h).shape();
                let keep = 1.0 / (1.0 - self.cfg.dropout);
                let m = (0..r * c)
                    .map(|_| if rng.random::<f64>() < self.cfg.dropout { 0.0 } else { keep })
                    .collect();
                let m = tape.constant(Matrix::from_vec(r, c, m).expect("sized"));
                h = tape.mul(h, m);
            }
        }
        let n = p.len();
        let h = tape.matmul(h, p[n - 2]);
        tape.add_row(h, p[n - 1])
    }

    fn predict(&self, x: &Matrix) -> Vec<f64> {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let out = self.forward(&mut tape, xv, None);
        tape.value(out).as_slice().to_vec()
    }
}

/// Train-split standardization, applied to every row.
fn standardize(x: &Matrix, train: &[usize]) -> Matrix {
    let (n, d) = x.shape();
    let mut out = x.clone();
    for j in 0..d {
        let m = train.iter().map(|&i| x.get(i, j)).sum::<f64>() / train.len() as f64;
        let v = train.iter().map(|&i| (x.get(i, j) - m).powi(2)).sum::<f64>() / train.len() as f64;
        let s = if v > 1e-24 { v.sqrt() } else { 1.0 };
        for i in 0..n {
            out.set(i, j, (x.get(i, j) - m) / s);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeRun {
    pub val: f64,
    pub test: f64,
    pub best_epoch: usize,
}

fn check_split(data: &Dataset, split: &Split) -> Result<(), EvalError> {
    let n = data.len();
    let mut seen = vec![false; n];
    for &i in split.train.iter().chain(&split.val).chain(&split.test) {
        if i >= n || seen[i] {
            return Err(EvalError::Config(format!("split index {i} out of range or repeated")));
        }
        seen[i] = true;
    }
    if split.train.is_empty() || split.val.is_empty() || split.test.is_empty() {
        return Err(EvalError::Config("every split must be nonempty".into()));
    }
    if data.kind == TargetKind::Binary {
        let pos = split.train.iter().filter(|&&i| data.y[i] > 0.5).count();
        if pos == 0 || pos == split.train.len() {
            return Err(EvalError::SingleClass);
        }
    }
    Ok(())
}

/// Full-batch Adam on the train split with early stopping on the validation
/// metric; the test metric is read at the best validation epoch.
pub fn train_probe(
    data: &Dataset,
    split: &Split,
    cfg: ProbeConfig,
    epochs: usize,
    patience: usize,
    seed: u64,
) -> Result<ProbeRun, EvalError> {
    check_split(data, split)?;
    let x = standardize(&data.x, &split.train);
    let (xtr, xva, xte) = (x.gather_rows(&split.train), x.gather_rows(&split.val), x.gather_rows(&split.test));
    let pick = |ids: &[usize]| ids.iter().map(|&i| data.y[i]).collect::<Vec<f64>>();
    let (ytr, yva, yte) = (pick(&split.train), pick(&split.val), pick(&split.test));

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mlp = Mlp::new(x.cols(), cfg, &mut rng);
    let adam = AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    };
    let mut opt = OptimizerState::new();
    let mut best = (f64::NEG_INFINITY, 0.0, 0);
    let mut since = 0;
    for epoch in 1..=epochs {
        let mut tape = Tape::new();
        let xv = tape.constant(xtr.clone());
        let out = mlp.forward(&mut tape, xv, Some(&mut rng));
        let loss = match data.kind {
            TargetKind::Binary => tape.bce_with_logits(out, ytr.clone()),
            TargetKind::Regression => tape.mse(out, ytr.clone()),
        };
        let grads = tape.backward(loss)?;
        adam_step(&mut mlp.store, &grads, &mut opt, &adam, cfg.lr)?;

        let v = score(data.kind, &mlp.predict(&xva), &yva)?;
        if v > best.0 {
            best = (v, score(data.kind, &mlp.predict(&xte), &yte)?, epoch);
            since = 0;
        } else {
            since += 1;
            if since >= patience {
                break;
            }
        }
    }
    Ok(ProbeRun {
        val: report(data.kind, best.0),
        test: report(data.kind, best.1),
        best_epoch: best.2,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub config: ProbeConfig,
    pub runs: Vec<ProbeRun>,
    pub val_mean: f64,
    pub test_mean: f64,
    pub test_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub n_cells: usize,
    pub cells: Vec<CellResult>,
    pub selected: usize,
    pub config: ProbeConfig,
    pub test_mean: f64,
    /// Sample standard deviation over seeds (0 for one seed).
    pub test_std: f64,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let s = if v.len() > 1 {
        (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (m, s)
}

/// Trains every grid cell over the grid's seeds, selects the cell with the
/// best mean validation metric, and reports its test mean and std.
pub fn probe(data: &Dataset, split: &Split, grid: &ProbeGrid, seed: u64) -> Result<ProbeReport, EvalError> {
    grid.validate()?;
    check_split(data, split)?;
    let cells = grid.cells();
    let results: Vec<CellResult> = cells
        .par_iter()
        .enumerate()
        .map(|(c, &config)| {
            let runs = (0..grid.seeds)
                .map(|s| train_probe(data, split, config, grid.epochs, grid.patience, sample_seed(seed, c as u64, s as u64)))
                .collect::<Result<Vec<_>, _>>()?;
            let vals: Vec<f64> = runs.iter().map(|r| r.val).collect();
            let tests: Vec<f64> = runs.iter().map(|r| r.test).collect();
            let (val_mean, _) = mean_std(&vals);
            let (test_mean, test_std) = mean_std(&tests);
            Ok(CellResult {
                config,
                runs,
                val_mean,
                test_mean,
                test_std,
            })
        })
        .collect::<Result<_, EvalError>>()?;
    let better = |a: f64, b: f64| match data.kind {
        TargetKind::Binary => a > b,
        TargetKind::Regression => a < b,
    };
    let mut selected = 0;
    for (i, r) in results.iter().enumerate() {
        if better(r.val_mean, results[selected].val_mean) {
            selected = i;
        }
    }
    let s = &results[selected];
    Ok(ProbeReport {
        n_cells: cells.len(),
        config: s.config,
        test_mean: s.test_mean,
        test_std: s.test_std,
        selected,
        cells: results,
    })
}

/// The training ids kept for a few-shot run, in their original order:
/// `shots` per class for classification, `shots` in total for regression.
pub fn few_shot_ids(data: &Dataset, train: &[usize], shots: usize, seed: u64) -> Result<Vec<usize>, EvalError> {
    if shots == 0 {
        return Err(EvalError::Config("shots must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = vec![false; train.len()];
    let groups: Vec<Vec<usize>> = match data.kind {
        TargetKind::Binary => [1.0, 0.0]
            .iter()
            .map(|&c| (0..train.len()).filter(|&p| (data.y[train[p]] > 0.5) == (c > 0.5)).collect())
            .collect(),
        TargetKind::Regression => vec![(0..train.len()).collect()],
    };
    for (class, mut pos) in groups.into_iter().enumerate() {
        if pos.len() < shots {
            return Err(EvalError::NotEnoughExamples {
                class,
                have: pos.len(),
                want: shots,
            });
        }
        pos.shuffle(&mut rng);
        for p in pos.into_iter().take(shots) {
            keep[p] = true;
        }
    }
    Ok(train.iter().zip(keep).filter(|(_, k)| *k).map(|(&i, _)| i).collect())
}

/// Probing with the training split reduced to `shots` examples.
pub fn few_shot(
    data: &Dataset,
    split: &Split,
    shots: usize,
    grid: &ProbeGrid,
    seed: u64,
) -> Result<ProbeReport, EvalError> {
    let train = few_shot_ids(data, &split.train, shots, seed)?;
    let reduced = Split {
        train,
        val: split.val.clone(),
        test: split.test.clone(),
    };
    probe(data, &reduced, grid, seed)
}
