//! `hetfm`: one binary driving generation, batching, pretraining,
//! evaluation, scaling sweeps and the expressivity harness.

mod commands;
mod config;
mod manifest;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context as _, Result};
use clap::{Args, CommandFactory, Parser, Subcommand};
use serde_json::Value;

use commands::{execute, resolve, Kind};
use manifest::{FileHash, Invocation, RunManifest, MANIFEST};

#[derive(Parser)]
#[command(name = "hetfm", version, about = "Heterogeneous graph foundation model toolkit")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON config file; keys override the defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random choice; required.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; defaults to all cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory; defaults to `out`, or `replay` beside the manifest.
    #[arg(long, global = true, env = "HETFM_OUT_DIR")]
    out_dir: Option<PathBuf>,
    /// Override one config key, e.g. `--set train.lr=0.003`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic heterogeneous graph.
    Gen {
        #[arg(long)]
        nodes: Option<usize>,
    },
    /// Cluster a graph by capped label propagation.
    Cluster {
        #[arg(long)]
        graph: PathBuf,
    },
    /// Pack clusters into storage batches.
    Batch {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        budget: Option<f64>,
    },
    /// Pretrain on masked link prediction.
    Pretrain {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        data_size: Option<usize>,
    },
    /// Probe frozen embeddings on a planted task.
    Probe(EvalArgs),
    /// Probe with a few labelled examples per class.
    Fewshot {
        #[command(flatten)]
        eval: EvalArgs,
        #[arg(long)]
        shots: Option<usize>,
    },
    /// Score held-out links with the frozen head.
    Zeroshot {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Node split from `pretrain`; restricts positives to holdout edges.
        #[arg(long)]
        split: Option<PathBuf>,
        #[arg(long)]
        level: Option<String>,
    },
    /// Scaling-law sweeps and fits.
    #[command(subcommand)]
    Scaling(ScalingCommand),
    /// Check the separation of the full model from its ablations.
    Expressivity {
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Pretrain and probe the full model and both ablations.
    Ablate {
        #[arg(long)]
        graph: PathBuf,
    },
    /// Re-run a manifest and compare output hashes.
    Replay { manifest: PathBuf },
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    graph: PathBuf,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// `frozen` or `raw`.
    #[arg(long)]
    features: Option<String>,
}

#[derive(Subcommand)]
enum ScalingCommand {
    /// Train a model ladder over data sizes and learning rates.
    Sweep {
        #[arg(long)]
        graph: PathBuf,
    },
    /// Fit the joint law to an observation CSV.
    Fit {
        #[arg(long)]
        observations: PathBuf,
    },
}

type Extra = Vec<(Vec<String>, Value)>;

fn flag<T: Into<Value>>(extra: &mut Extra, path: &[&str], v: Option<T>) {
    if let Some(v) = v {
        extra.push((path.iter().map(|s| s.to_string()).collect(), v.into()));
    }
}

fn absolute(p: &Path) -> Result<PathBuf> {
    std::fs::canonicalize(p).with_context(|| format!("input {} not found", p.display()))
}

/// Splits parsed arguments into a subcommand, its named inputs and its flag
/// overrides.
fn plan(cmd: Command) -> Result<(Kind, BTreeMap<String, PathBuf>, Extra)> {
    let mut inputs = BTreeMap::new();
    let mut extra = Extra::new();
    let mut add = |name: &str, p: &Path| -> Result<()> {
        inputs.insert(name.to_string(), absolute(p)?);
        Ok(())
    };
    let kind = match cmd {
        Command::Gen { nodes } => {
            flag(&mut extra, &["n_nodes"], nodes);
            Kind::Gen
        }
        Command::Cluster { graph } => {
            add("graph", &graph)?;
            Kind::Cluster
        }
        Command::Batch { graph, budget } => {
            add("graph", &graph)?;
            flag(&mut extra, &["budget"], budget);
            Kind::Batch
        }
        Command::Pretrain {
            graph,
            lr,
            epochs,
            data_size,
        } => {
            add("graph", &graph)?;
            flag(&mut extra, &["train", "lr"], lr);
            flag(&mut extra, &["train", "epochs"], epochs);
            flag(&mut extra, &["train", "data_size"], data_size);
            Kind::Pretrain
        }
        Command::Probe(e) => {
            eval_args(e, &mut add, &mut extra)?;
            Kind::Probe
        }
        Command::Fewshot { eval, shots } => {
            eval_args(eval, &mut add, &mut extra)?;
            flag(&mut extra, &["shots"], shots);
            Kind::FewShot
        }
        Command::Zeroshot {
            graph,
            checkpoint,
            split,
            level,
        } => {
            add("graph", &graph)?;
            add("checkpoint", &checkpoint)?;
            if let Some(s) = split {
                add("split", &s)?;
            }
            flag(&mut extra, &["level"], level);
            Kind::ZeroShot
        }
        Command::Scaling(ScalingCommand::Sweep { graph }) => {
            add("graph", &graph)?;
            Kind::ScalingSweep
        }
        Command::Scaling(ScalingCommand::Fit { observations }) => {
            add("observations", &observations)?;
            Kind::ScalingFit
        }
        Command::Expressivity { trials } => {
            flag(&mut extra, &["trials"], trials);
            Kind::Expressivity
        }
        Command::Ablate { graph } => {
            add("graph", &graph)?;
            Kind::Ablate
        }
        Command::Replay { .. } => unreachable!("handled by the caller"),
    };
    Ok((kind, inputs, extra))
}

fn eval_args(e: EvalArgs, add: &mut impl FnMut(&str, &Path) -> Result<()>, extra: &mut Extra) -> Result<()> {
    add("graph", &e.graph)?;
    if let Some(c) = &e.checkpoint {
        add("checkpoint", c)?;
    }
    flag(extra, &["features"], e.features);
    Ok(())
}

fn init_threads(threads: Option<usize>) -> Result<()> {
    if let Some(n) = threads {
        if n == 0 {
            bail!("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

/// Executes an invocation and writes its manifest.
fn run(inv: Invocation, seed: u64, threads: Option<usize>, out: &Path) -> Result<(RunManifest, bool)> {
    let start = Instant::now();
    let input_hashes = inv.inputs.values().map(|p| FileHash::of(p)).collect::<Result<Vec<_>>>()?;
    let outcome = execute(&inv, seed, out)?;
    let outputs = outcome
        .outputs
        .iter()
        .map(|name| {
            let h = FileHash::of(&out.join(name))?;
            Ok(FileHash {
                path: PathBuf::from(name),
                sha256: h.sha256,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let m = RunManifest {
        invocation: inv,
        seed,
        threads,
        input_hashes,
        version: env!("CARGO_PKG_VERSION").to_string(),
        outputs,
        wall_clock_secs: start.elapsed().as_secs_f64(),
    };
    m.write(out)?;
    Ok((m, outcome.pass))
}

fn replay(path: &Path, out: Option<&Path>, threads: Option<usize>) -> Result<bool> {
    let original = RunManifest::read(path)?;
    for h in &original.input_hashes {
        let now = FileHash::of(&h.path)?;
        if now.sha256 != h.sha256 {
            bail!("input {} changed since the recorded run", h.path.display());
        }
    }
    let default_out;
    let out = match out {
        Some(o) => o,
        None => {
            let dir = path.parent().unwrap_or(Path::new("."));
            default_out = dir.join("replay");
            &default_out
        }
    };
    init_threads(threads.or(original.threads))?;
    let (m, _) = run(original.invocation.clone(), original.seed, original.threads, out)?;
    let mut same = m.outputs.len() == original.outputs.len();
    for (a, b) in original.outputs.iter().zip(&m.outputs) {
        if a != b {
            eprintln!("differs: {}", a.path.display());
            same = false;
        }
    }
    println!("{}", if same { "identical" } else { "different" });
    Ok(same)
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    let c = cli.common;
    let result = match cli.command {
        Command::Replay { manifest } => replay(&manifest, c.out_dir.as_deref(), c.threads),
        cmd => {
            let Some(seed) = c.seed else {
                Cli::command()
                    .error(clap::error::ErrorKind::MissingRequiredArgument, "--seed is required")
                    .exit();
            };
            (|| {
                init_threads(c.threads)?;
                let (kind, inputs, extra) = plan(cmd)?;
                let config = resolve(kind, c.config.as_deref(), &c.set, extra, seed)?;
                let inv = Invocation {
                    command: kind.name().to_string(),
                    config,
                    inputs,
                };
                let out = c.out_dir.unwrap_or_else(|| PathBuf::from("out"));
                let (m, pass) = run(inv, seed, c.threads, &out)?;
                println!("{}", out.join(MANIFEST).display());
                for o in &m.outputs {
                    println!("  {}", o.path.display());
                }
                Ok(pass)
            })()
        }
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
