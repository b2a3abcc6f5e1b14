use std::fs::File;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::fit::ScalingFit;
use super::ladder::log_ladder;
use super::{ScalingError, ScalingObservation};

/// A point on a fitted curve. `axis` names the swept variable; the other one
/// is held at an observed value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub axis: String,
    pub n: f64,
    pub d: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlotFiles {
    pub observations: PathBuf,
    pub curves: PathBuf,
    pub fit: PathBuf,
}

pub fn write_observations(obs: &[ScalingObservation], path: &Path) -> Result<(), ScalingError> {
    let mut w = csv::Writer::from_path(path)?;
    if obs.is_empty() {
        w.write_record(["n", "d", "lr", "seed", "loss", "flags"])?;
    }
    for o in obs {
        w.serialize(o)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_observations(path: &Path) -> Result<Vec<ScalingObservation>, ScalingError> {
    let mut r = csv::Reader::from_path(path)?;
    let obs = r.deserialize().collect::<Result<Vec<ScalingObservation>, _>>()?;
    Ok(obs)
}

fn distinct(v: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut out: Vec<f64> = v.collect();
    out.sort_by(f64::total_cmp);
    out.dedup();
    out
}

/// Writes `observations.csv`, `curves.csv` and `fit.json` under `dir`. Each
/// observed D gets a curve over N and each observed N a curve over D, with
/// `points` log-uniform samples spanning the observed range.
pub fn emit_plot_data(
    obs: &[ScalingObservation],
    fit: &ScalingFit,
    points: usize,
    dir: &Path,
) -> Result<PlotFiles, ScalingError> {
    std::fs::create_dir_all(dir)?;
    let files = PlotFiles {
        observations: dir.join("observations.csv"),
        curves: dir.join("curves.csv"),
        fit: dir.join("fit.json"),
    };
    write_observations(obs, &files.observations)?;

    let ns = distinct(obs.iter().map(|o| o.n));
    let ds = distinct(obs.iter().map(|o| o.d));
    let mut w = csv::Writer::from_path(&files.curves)?;
    w.write_record(["axis", "n", "d", "loss"])?;
    let mut row = |axis: &str, n: f64, d: f64| -> Result<(), ScalingError> {
        w.write_record([axis.to_string(), n.to_string(), d.to_string(), fit.eval(n, d).to_string()])?;
        Ok(())
    };
    if let (Some(&n_lo), Some(&n_hi), Some(&d_lo), Some(&d_hi)) = (ns.first(), ns.last(), ds.first(), ds.last()) {
        for &d in &ds {
            for n in log_ladder(n_lo, n_hi, points) {
                row("n", n, d)?;
            }
        }
        for &n in &ns {
            for d in log_ladder(d_lo, d_hi, points) {
                row("d", n, d)?;
            }
        }
    }
    w.flush()?;

    serde_json::to_writer_pretty(File::create(&files.fit)?, fit).map_err(|e| ScalingError::Io(e.to_string()))?;
    Ok(files)
}
