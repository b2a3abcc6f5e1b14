//! Scaling-law sweeps and fits of `L(N, D) = L_inf + (N_c/N)^a_N + (D_c/D)^a_D`.

mod fit;
mod ladder;
mod plot;
mod sweep;

pub use fit::{fit_joint, fit_power_d, fit_power_n, log_r2, FitOptions, PowerFit, ScalingFit};
pub use ladder::{log_ladder, model_ladder, Rung};
pub use plot::{emit_plot_data, read_observations, write_observations, CurvePoint, PlotFiles};
pub use sweep::{median_over_seeds, sweep, DivergedRun, SweepConfig, SweepOutcome};

use serde::{Deserialize, Serialize};

use crate::model::ModelError;
use crate::pretrain::PretrainError;

/// Published model sizes for the nine-rung ladder.
pub const REFERENCE_MODEL_SIZES: [f64; 9] = [1.0e6, 2.8e6, 7.9e6, 2.2e7, 6.3e7, 1.77e8, 4.97e8, 1.4e9, 3.92e9];
/// Published data sizes for the eight-rung ladder.
pub const REFERENCE_DATA_SIZES: [f64; 8] = [3e5, 1e6, 3e6, 1e7, 3e7, 1e8, 3e8, 1e9];
/// Published marginal fits, for plot overlays only.
pub const REFERENCE_ALPHA_N: f64 = 0.703;
pub const REFERENCE_N_C: f64 = 2.1e4;
pub const REFERENCE_ALPHA_D: f64 = 0.188;
pub const REFERENCE_D_C: f64 = 4.7;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScalingError {
    #[error("invalid scaling input: {0}")]
    Config(String),
    #[error("need at least {need} observations, got {have}")]
    TooFewPoints { have: usize, need: usize },
    #[error("observations span {n_decades:.2} decades in N and {d_decades:.2} in D; need {need} in each")]
    InsufficientSpan { n_decades: f64, d_decades: f64, need: f64 },
    #[error("no model of at most {max_layers} layers lands near {target} parameters")]
    Unreachable { target: f64, max_layers: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Pretrain(#[from] PretrainError),
    #[error("i/o: {0}")]
    Io(String),
}

impl From<std::io::Error> for ScalingError {
    fn from(e: std::io::Error) -> Self {
        Self::Io(e.to_string())
    }
}

impl From<csv::Error> for ScalingError {
    fn from(e: csv::Error) -> Self {
        Self::Io(e.to_string())
    }
}

/// Best validation loss of one `(N, D)` cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingObservation {
    /// Parameter count.
    pub n: f64,
    /// Distinct supervised edges.
    pub d: f64,
    pub lr: f64,
    pub seed: u64,
    pub loss: f64,
    /// Empty, or `partial_divergence` when some learning rates diverged.
    #[serde(default)]
    pub flags: String,
}

impl ScalingObservation {
    pub fn new(n: f64, d: f64, loss: f64) -> Self {
        Self {
            n,
            d,
            lr: 0.0,
            seed: 0,
            loss,
            flags: String::new(),
        }
    }

    pub fn validate(&self) -> Result<(), ScalingError> {
        if !(self.n >= 1.0 && self.d >= 1.0 && self.n.is_finite() && self.d.is_finite()) {
            return Err(ScalingError::Config(format!("N = {}, D = {} must be finite and >= 1", self.n, self.d)));
        }
        if !(self.loss.is_finite() && self.loss > 0.0) {
            return Err(ScalingError::Config(format!("loss {} must be finite and positive", self.loss)));
        }
        Ok(())
    }
}
