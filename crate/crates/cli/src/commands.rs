use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context as _, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use hetfm::batching::{cluster_graph, cluster_stats, kl_batch, BatchManifest, CostModel, KlWeights, LabelPropagation, PackVariant};
use hetfm::eval::{
    embed_frozen, few_shot, pca2, probe, raw_features, split_indices, zero_shot_links, Dataset, EmbedOptions, LinkTask,
    ProbeGrid, ProbeReport,
};
use hetfm::expressivity::{verify_separation, SeparationOptions};
use hetfm::hetgraph::{load_cache, sample_seed, save_cache, write_jsonl, HetGraph, TypeRegistry};
use hetfm::model::{load_checkpoint, AblationMode, ModelConfig, ModelParams, NeighborhoodConfig};
use hetfm::pretrain::{component_split, pretrain, NodeSplit, TrainConfig};
use hetfm::scaling::{
    emit_plot_data, fit_joint, fit_power_d, fit_power_n, log_ladder, log_r2, median_over_seeds, model_ladder,
    read_observations, sweep, write_observations, FitOptions, SweepConfig,
};
use hetfm::syngen::{generate, plant_labels, LabelRule, LabelTable, PlantedTask, TargetKind, TaskLevel};

use crate::config::load_config;
use crate::manifest::Invocation;

/// Model shape; the type registry comes from the graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSpec {
    pub layers: usize,
    pub d_model: usize,
    pub heads: usize,
    /// Defaults to `d_model`.
    pub phi_hidden: Option<usize>,
    /// Defaults to `2 * d_model`.
    pub ffn_hidden: Option<usize>,
    /// Defaults to `d_model`.
    pub head_hidden: Option<usize>,
    pub dropout: f64,
    pub neighborhood: NeighborhoodConfig,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            layers: 2,
            d_model: 32,
            heads: 4,
            phi_hidden: None,
            ffn_hidden: None,
            head_hidden: None,
            dropout: 0.0,
            neighborhood: NeighborhoodConfig::default(),
        }
    }
}

impl ModelSpec {
    pub fn build(&self, registry: TypeRegistry) -> ModelConfig {
        let mut c = ModelConfig::new(registry, self.layers, self.d_model, self.heads);
        if let Some(h) = self.phi_hidden {
            c.phi_hidden = h;
        }
        if let Some(h) = self.ffn_hidden {
            c.ffn_hidden = h;
        }
        if self.head_hidden.is_some() {
            c.head_hidden = self.head_hidden;
        }
        c.dropout = self.dropout;
        c.neighborhood = self.neighborhood.clone();
        c
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterCmd {
    pub label_propagation: LabelPropagation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BatchCmd {
    pub label_propagation: LabelPropagation,
    pub cost: CostModel,
    pub kl_weights: KlWeights,
    pub budget: f64,
    pub variant: PackVariant,
}

impl Default for BatchCmd {
    fn default() -> Self {
        Self {
            label_propagation: LabelPropagation::default(),
            cost: CostModel::default(),
            kl_weights: KlWeights::default(),
            budget: 20_000.0,
            variant: PackVariant::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainCmd {
    pub model: ModelSpec,
    pub train: TrainConfig,
    /// Fraction of connected components held out for validation.
    pub holdout_frac: f64,
}

impl Default for PretrainCmd {
    fn default() -> Self {
        Self {
            model: ModelSpec::default(),
            train: TrainConfig {
                check_masking: false,
                ..TrainConfig::default()
            },
            holdout_frac: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Features {
    /// Frozen encoder embeddings; needs `--checkpoint`.
    #[default]
    Frozen,
    /// Input features plus a type one-hot.
    Raw,
}

fn default_task() -> PlantedTask {
    PlantedTask {
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
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeCmd {
    pub task: PlantedTask,
    pub features: Features,
    pub embed: EmbedOptions,
    pub grid: ProbeGrid,
    pub train_frac: f64,
    pub val_frac: f64,
    /// Examples per class kept by `fewshot`; unused by `probe`.
    pub shots: usize,
}

impl Default for ProbeCmd {
    fn default() -> Self {
        Self {
            task: default_task(),
            features: Features::default(),
            embed: EmbedOptions::default(),
            grid: ProbeGrid::default(),
            train_frac: 0.8,
            val_frac: 0.1,
            shots: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ZeroShotCmd {
    pub level: TaskLevel,
    /// Take every `stride`-th candidate edge as a positive.
    pub stride: usize,
    pub max_edges: usize,
    pub neg_per_pos: usize,
    pub embed: EmbedOptions,
}

impl Default for ZeroShotCmd {
    fn default() -> Self {
        Self {
            level: TaskLevel::Edge,
            stride: 1,
            max_edges: 2000,
            neg_per_pos: 1,
            embed: EmbedOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepCmd {
    /// Shape template; the ladder rescales its widths.
    pub template: ModelSpec,
    pub n_min: f64,
    pub n_max: f64,
    pub rungs: usize,
    pub max_layers: usize,
    pub holdout_frac: f64,
    pub sweep: SweepConfig,
}

impl Default for SweepCmd {
    fn default() -> Self {
        let mut sweep = SweepConfig::default();
        sweep.train.check_masking = false;
        Self {
            template: ModelSpec {
                layers: 1,
                d_model: 8,
                heads: 1,
                ..ModelSpec::default()
            },
            n_min: 1e3,
            n_max: 1e6,
            rungs: 4,
            max_layers: 4,
            holdout_frac: 0.1,
            sweep,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitCmd {
    pub fit: FitOptions,
    /// Fit the per-cell median over seeds rather than every run.
    pub median_seeds: bool,
    /// Samples per curve in `curves.csv`.
    pub points: usize,
}

impl Default for FitCmd {
    fn default() -> Self {
        Self {
            fit: FitOptions::default(),
            median_seeds: true,
            points: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblateCmd {
    pub model: ModelSpec,
    pub train: TrainConfig,
    pub holdout_frac: f64,
    pub tasks: Vec<PlantedTask>,
    pub embed: EmbedOptions,
    pub grid: ProbeGrid,
    pub train_frac: f64,
    pub val_frac: f64,
}

impl Default for AblateCmd {
    fn default() -> Self {
        let p = PretrainCmd::default();
        Self {
            model: p.model,
            train: p.train,
            holdout_frac: p.holdout_frac,
            tasks: vec![default_task()],
            embed: EmbedOptions::default(),
            grid: ProbeGrid::default(),
            train_frac: 0.8,
            val_frac: 0.1,
        }
    }
}

/// Subcommands that run a pipeline and write a manifest.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Gen,
    Cluster,
    Batch,
    Pretrain,
    Probe,
    FewShot,
    ZeroShot,
    ScalingSweep,
    ScalingFit,
    Expressivity,
    Ablate,
}

impl Kind {
    pub const ALL: [Kind; 11] = [
        Kind::Gen,
        Kind::Cluster,
        Kind::Batch,
        Kind::Pretrain,
        Kind::Probe,
        Kind::FewShot,
        Kind::ZeroShot,
        Kind::ScalingSweep,
        Kind::ScalingFit,
        Kind::Expressivity,
        Kind::Ablate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Kind::Gen => "gen",
            Kind::Cluster => "cluster",
            Kind::Batch => "batch",
            Kind::Pretrain => "pretrain",
            Kind::Probe => "probe",
            Kind::FewShot => "fewshot",
            Kind::ZeroShot => "zeroshot",
            Kind::ScalingSweep => "scaling sweep",
            Kind::ScalingFit => "scaling fit",
            Kind::Expressivity => "expressivity",
            Kind::Ablate => "ablate",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }

    /// Where `--seed` lands in the resolved config, if anywhere.
    fn seed_path(self) -> &'static [&'static str] {
        match self {
            Kind::Gen | Kind::Expressivity => &["seed"],
            Kind::Pretrain | Kind::Ablate => &["train", "seed"],
            Kind::Probe | Kind::FewShot | Kind::ZeroShot => &["embed", "seed"],
            Kind::ScalingFit => &["fit", "seed"],
            Kind::Cluster | Kind::Batch | Kind::ScalingSweep => &[],
        }
    }
}

fn resolve_as<T: Serialize + serde::de::DeserializeOwned + Default>(
    file: Option<&Path>,
    overrides: &[String],
    extra: Vec<(Vec<String>, Value)>,
) -> Result<Value> {
    let typed: T = load_config(file, overrides, extra)?;
    Ok(serde_json::to_value(typed)?)
}

/// Resolves the full config of `kind`. `extra` holds per-subcommand flags,
/// which win over the file and `--set`.
pub fn resolve(
    kind: Kind,
    file: Option<&Path>,
    overrides: &[String],
    mut extra: Vec<(Vec<String>, Value)>,
    seed: u64,
) -> Result<Value> {
    let sp = kind.seed_path();
    if !sp.is_empty() {
        extra.push((sp.iter().map(|s| s.to_string()).collect(), seed.into()));
    }
    match kind {
        Kind::Gen => resolve_as::<hetfm::syngen::SynConfig>(file, overrides, extra),
        Kind::Cluster => resolve_as::<ClusterCmd>(file, overrides, extra),
        Kind::Batch => resolve_as::<BatchCmd>(file, overrides, extra),
        Kind::Pretrain => resolve_as::<PretrainCmd>(file, overrides, extra),
        Kind::Probe | Kind::FewShot => resolve_as::<ProbeCmd>(file, overrides, extra),
        Kind::ZeroShot => resolve_as::<ZeroShotCmd>(file, overrides, extra),
        Kind::ScalingSweep => resolve_as::<SweepCmd>(file, overrides, extra),
        Kind::ScalingFit => resolve_as::<FitCmd>(file, overrides, extra),
        Kind::Expressivity => resolve_as::<SeparationOptions>(file, overrides, extra),
        Kind::Ablate => resolve_as::<AblateCmd>(file, overrides, extra),
    }
}

/// Result of a pipeline run.
pub struct Outcome {
    /// Output files relative to the output directory.
    pub outputs: Vec<String>,
    /// False when the run completed but its check failed.
    pub pass: bool,
}

impl Outcome {
    fn ok(outputs: Vec<String>) -> Self {
        Self { outputs, pass: true }
    }
}

fn input<'a>(inv: &'a Invocation, name: &str) -> Result<&'a Path> {
    inv.inputs
        .get(name)
        .map(PathBuf::as_path)
        .with_context(|| format!("`{}` needs --{name}", inv.command))
}

fn graph(inv: &Invocation) -> Result<HetGraph> {
    let path = input(inv, "graph")?;
    load_cache(path).with_context(|| format!("loading graph {}", path.display()))
}

fn checkpoint(inv: &Invocation) -> Result<ModelParams> {
    let path = input(inv, "checkpoint")?;
    load_checkpoint(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<String> {
    std::fs::write(dir.join(name), serde_json::to_string_pretty(value)? + "\n")?;
    Ok(name.to_string())
}

fn typed<T: serde::de::DeserializeOwned>(inv: &Invocation) -> Result<T> {
    serde_json::from_value(inv.config.clone()).context("invalid configuration")
}

/// Runs `inv` and writes its outputs under `out`.
pub fn execute(inv: &Invocation, seed: u64, out: &Path) -> Result<Outcome> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let kind = Kind::from_name(&inv.command).with_context(|| format!("unknown command `{}`", inv.command))?;
    match kind {
        Kind::Gen => run_gen(inv, out),
        Kind::Cluster => run_cluster(inv, seed, out),
        Kind::Batch => run_batch(inv, seed, out),
        Kind::Pretrain => run_pretrain(inv, seed, out),
        Kind::Probe | Kind::FewShot => run_probe(inv, kind, seed, out),
        Kind::ZeroShot => run_zeroshot(inv, seed, out),
        Kind::ScalingSweep => run_sweep(inv, seed, out),
        Kind::ScalingFit => run_fit(inv, out),
        Kind::Expressivity => run_expressivity(inv, out),
        Kind::Ablate => run_ablate(inv, seed, out),
    }
}

fn run_gen(inv: &Invocation, out: &Path) -> Result<Outcome> {
    let cfg: hetfm::syngen::SynConfig = typed(inv)?;
    let g = generate(&cfg)?;
    save_cache(&g, &out.join("graph.cache"))?;
    write_jsonl(&g, &out.join("nodes.jsonl"), &out.join("edges.jsonl"))?;
    Ok(Outcome::ok(vec!["graph.cache".into(), "nodes.jsonl".into(), "edges.jsonl".into()]))
}

#[derive(Serialize)]
struct ClusterSummary {
    clusters: usize,
    sizes: Vec<usize>,
    labels: Vec<usize>,
}

fn run_cluster(inv: &Invocation, seed: u64, out: &Path) -> Result<Outcome> {
    let cfg: ClusterCmd = typed(inv)?;
    let g = graph(inv)?;
    let c = cluster_graph(&g, &cfg.label_propagation, seed)?;
    let summary = ClusterSummary {
        clusters: c.len(),
        sizes: c.members.iter().map(Vec::len).collect(),
        labels: c.labels,
    };
    Ok(Outcome::ok(vec![write_json(out, "clusters.json", &summary)?]))
}

fn run_batch(inv: &Invocation, seed: u64, out: &Path) -> Result<Outcome> {
    let cfg: BatchCmd = typed(inv)?;
    let g = graph(inv)?;
    let c = cluster_graph(&g, &cfg.label_propagation, seed)?;
    let clusters = cluster_stats(&g, &c, &cfg.cost, &cfg.kl_weights, None)?;
    let batches = kl_batch(&clusters, cfg.budget, cfg.variant)?;
    let manifest = BatchManifest::new(cfg.budget, cfg.variant, &clusters, batches);
    Ok(Outcome::ok(vec![write_json(out, "batches.json", &manifest)?]))
}

#[derive(Serialize)]
struct PretrainSummary {
    parameters: usize,
    data_size: usize,
    steps: usize,
    epochs: usize,
    steps_per_epoch: usize,
    stopped_early: bool,
    best_val: Option<f64>,
}

fn checkpoints_in(out: &Path) -> Result<Vec<String>> {
    let mut v: Vec<String> = std::fs::read_dir(out)?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".bffc"))
        .collect();
    v.sort();
    Ok(v)
}

fn pretrained(
    g: &HetGraph,
    model: &ModelSpec,
    train: &TrainConfig,
    holdout_frac: f64,
    seed: u64,
    out: Option<&Path>,
) -> Result<(hetfm::pretrain::PretrainOutcome, NodeSplit)> {
    let split = component_split(g, holdout_frac, sample_seed(seed, 20, 0))?;
    let init = ModelParams::init(model.build(g.registry().clone()), sample_seed(seed, 21, 0))?;
    Ok((pretrain(g, train, init, &split, out)?, split))
}

fn run_pretrain(inv: &Invocation, seed: u64, out: &Path) -> Result<Outcome> {
    let cfg: PretrainCmd = typed(inv)?;
    let g = graph(inv)?;
    let (o, split) = pretrained(&g, &cfg.model, &cfg.train, cfg.holdout_frac, seed, Some(out))?;
    let mut outputs = checkpoints_in(out)?;
    let f = std::fs::File::create(out.join("trace.csv"))?;
    o.trace.write_csv(f)?;
    outputs.push("trace.csv".into());
    outputs.push(write_json(out, "split.json", &split)?);
    let summary = PretrainSummary {
        parameters: o.best.scalar_count(),
        data_size: o.data.size,
        steps: o.steps,
        epochs: o.epochs,
        steps_per_epoch: o.steps_per_epoch,
        stopped_early: o.stopped_early,
        best_val: o.trace.best_val(),
    };
    outputs.push(write_json(out, "summary.json", &summary)?);
    Ok(Outcome::ok(outputs))
}

fn labelled(
    g: &HetGraph,
    params: Option<&ModelParams>,
    task: &PlantedTask,
    embed: &EmbedOptions,
    seed: u64,
) -> Result<(Dataset, LabelTable)> {
    let labels = plant_labels(g, task, sample_seed(seed, 30, 0))?;
    let x = match params {
        Some(p) => embed_frozen(p, g, &labels.targets, embed)?,
        None => raw_features(g, &labels.targets),
    };
    Ok((Dataset::new(x, labels.values.clone(), task.kind)?, labels))
}

#[derive(Serialize)]
struct ProbeOutput<'a> {
    features: Features,
    targets: usize,
    shots: Option<usize>,
    report: &'a ProbeReport,
}

#[derive(Serialize)]
struct PcaRow {
    x: f64,
    y: f64,
    label: f64,
}

fn run_probe(inv: &Invocation, kind: Kind, seed: u64, out: &Path) -> Result<Outcome> {
    let cfg: ProbeCmd = typed(inv)?;
    let g = graph(inv)?;
    let params = match cfg.features {
        Features::Frozen => Some(checkpoint(inv)?),
        Features::Raw => None,
    };
    let (data, _) = labelled(&g, params.as_ref(), &cfg.task, &cfg.embed, seed)?;
    let split = split_indices(data.len(), cfg.train_frac, cfg.val_frac, sample_seed(seed, 31, 0))?;
    let (report, shots) = match kind {
        Kind::FewShot => (few_shot(&data, &split, cfg.shots, &cfg.grid, seed)?, Some(cfg.shots)),
        _ => (probe(&data, &split, &cfg.grid, seed)?, None),
    };
    let body = ProbeOutput {
        features: cfg.features,
        targets: data.len(),
        shots,
        report: &report,
    };
    let mut outputs = vec![write_json(out, "report.json", &body)?];
    let p = pca2(&data.x)?;
    let mut w = csv::Writer::from_path(out.join("pca.csv"))?;
    for (c, &label) in p.coords.iter().zip(&data.y) {
        w.serialize(PcaRow { x: c[0], y: c[1], label })?;
    }
    w.flush()?;
    outputs.push("pca.csv".into());
    Ok(Outcome::ok(outputs))
}

#[derive(Serialize)]
struct ZeroShotOutput {
    positives: usize,
    candidates: usize,
    prauc: f64,
    class_rate: f64,
}

fn run_zeroshot(inv: &Invocation, seed: u64, out: &Path) -> Result<Outcome> {
    let cfg: ZeroShotCmd = typed(inv)?;
    if cfg.stride == 0 || cfg.max_edges == 0 {
        bail!("stride and max_edges must be positive");
    }
    let g = graph(inv)?;
    let params = checkpoint(inv)?;
    let allowed: Option<Vec<bool>> = match inv.inputs.get("split") {
        Some(p) => {
            let split: NodeSplit = serde_json::from_str(&std::fs::read_to_string(p)?)?;
            let mut mask = vec![false; g.n_nodes()];
            for &v in &split.holdout {
                if v < mask.len() {
                    mask[v] = true;
                }
            }
            Some(mask)
        }
        None => None,
    };
    let edges: Vec<usize> = (0..g.n_edges())
        .filter(|&e| {
            allowed.as_ref().is_none_or(|m| {
                let ed = g.edge(e);
                m[ed.src] && m[ed.dst]
            })
        })
        .step_by(cfg.stride)
        .take(cfg.max_edges)
        .collect();
    let task = LinkTask::from_edges(&g, &edges, cfg.neg_per_pos, sample_seed(seed, 40, 0));
    let r = zero_shot_links(&params, &g, cfg.level, &task, &cfg.embed)?;
    let body = ZeroShotOutput {
        positives: edges.len(),
        candidates: task.labels.len(),
        prauc: r.prauc,
        class_rate: r.class_rate,
    };
    Ok(Outcome::ok(vec![write_json(out, "report.json", &body)?]))
}

#[derive(Serialize)]
struct RungSummary {
    target: f64,
    parameters: usize,
    layers: usize,
    d_model: usize,
}

fn run_sweep(inv: &Invocation, seed: u64, out: &Path) -> Result<Outcome> {
    let cfg: SweepCmd = typed(inv)?;
    let g = graph(inv)?;
    let template = cfg.template.build(g.registry().clone());
    let rungs = model_ladder(&template, &log_ladder(cfg.n_min, cfg.n_max, cfg.rungs), cfg.max_layers)?;
    let summary: Vec<RungSummary> = rungs
        .iter()
        .map(|r| RungSummary {
            target: r.target,
            parameters: r.params,
            layers: r.config.layers,
            d_model: r.config.d_model,
        })
        .collect();
    let configs: Vec<ModelConfig> = rungs.into_iter().map(|r| r.config).collect();
    let split = component_split(&g, cfg.holdout_frac, sample_seed(seed, 50, 0))?;
    let o = sweep(&g, &split, &configs, &cfg.sweep)?;
    write_observations(&o.observations, &out.join("observations.csv"))?;
    Ok(Outcome::ok(vec![
        "observations.csv".into(),
        write_json(out, "diverged.json", &o.diverged)?,
        write_json(out, "ladder.json", &summary)?,
    ]))
}

#[derive(Serialize)]
struct FitSummary {
    points: usize,
    r2: f64,
    power_n: Option<hetfm::scaling::PowerFit>,
    power_d: Option<hetfm::scaling::PowerFit>,
}

fn run_fit(inv: &Invocation, out: &Path) -> Result<Outcome> {
    let cfg: FitCmd = typed(inv)?;
    let mut obs = read_observations(input(inv, "observations")?)?;
    if cfg.median_seeds {
        obs = median_over_seeds(&obs);
    }
    let fit = fit_joint(&obs, &cfg.fit)?;
    emit_plot_data(&obs, &fit, cfg.points, out)?;
    let summary = FitSummary {
        points: obs.len(),
        r2: log_r2(&fit, &obs),
        power_n: fit_power_n(&obs, fit.l_inf).ok(),
        power_d: fit_power_d(&obs, fit.l_inf).ok(),
    };
    Ok(Outcome::ok(vec![
        "observations.csv".into(),
        "curves.csv".into(),
        "fit.json".into(),
        write_json(out, "summary.json", &summary)?,
    ]))
}

fn run_expressivity(inv: &Invocation, out: &Path) -> Result<Outcome> {
    let cfg: SeparationOptions = typed(inv)?;
    let report = verify_separation(&cfg)?;
    Ok(Outcome {
        outputs: vec![write_json(out, "report.json", &report)?],
        pass: report.pass,
    })
}

/// One row of the ablation table. `delta` is oriented so that negative
/// means worse than the full model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub task: usize,
    pub mode: AblationMode,
    pub metric: String,
    pub test_mean: f64,
    pub test_std: f64,
    pub delta: f64,
}

fn run_ablate(inv: &Invocation, seed: u64, out: &Path) -> Result<Outcome> {
    let cfg: AblateCmd = typed(inv)?;
    if cfg.tasks.is_empty() {
        bail!("ablate needs at least one task");
    }
    let g = graph(inv)?;
    let modes = [AblationMode::Full, AblationMode::TcaOnly, AblationMode::TaaOnly];
    let mut scores: BTreeMap<(usize, usize), (f64, f64)> = BTreeMap::new();
    for (mi, &mode) in modes.iter().enumerate() {
        let train = TrainConfig { mode, ..cfg.train.clone() };
        let (o, _) = pretrained(&g, &cfg.model, &train, cfg.holdout_frac, seed, None)?;
        let embed = EmbedOptions { mode, ..cfg.embed.clone() };
        for (ti, task) in cfg.tasks.iter().enumerate() {
            let task_seed = sample_seed(seed, 60, ti as u64);
            let (data, _) = labelled(&g, Some(&o.best), task, &embed, task_seed)?;
            let split = split_indices(data.len(), cfg.train_frac, cfg.val_frac, sample_seed(task_seed, 31, 0))?;
            let r = probe(&data, &split, &cfg.grid, task_seed)?;
            scores.insert((ti, mi), (r.test_mean, r.test_std));
        }
    }
    let mut rows = Vec::new();
    for (ti, task) in cfg.tasks.iter().enumerate() {
        let (metric, sign) = match task.kind {
            TargetKind::Binary => ("prauc", 1.0),
            TargetKind::Regression => ("mae", -1.0),
        };
        let full = scores[&(ti, 0)].0;
        for (mi, &mode) in modes.iter().enumerate() {
            let (m, s) = scores[&(ti, mi)];
            rows.push(AblationRow {
                task: ti,
                mode,
                metric: metric.into(),
                test_mean: m,
                test_std: s,
                delta: sign * (m - full),
            });
        }
    }
    let mut w = csv::Writer::from_path(out.join("ablate.csv"))?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(Outcome::ok(vec!["ablate.csv".into(), write_json(out, "ablate.json", &rows)?]))
}
