use serde::{Deserialize, Serialize};

use super::ScalingError;
use crate::model::{param_count, ModelConfig};

/// `n` log-spaced values from `lo` to `hi` inclusive.
pub fn log_ladder(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let (a, b) = (lo.ln(), hi.ln());
            (0..n)
                .map(|i| {
                    if i == 0 {
                        lo
                    } else if i == n - 1 {
                        hi
                    } else {
                        (a + (b - a) * i as f64 / (n - 1) as f64).exp()
                    }
                })
                .collect()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rung {
    pub config: ModelConfig,
    pub params: usize,
    pub target: f64,
}

impl Rung {
    pub fn rel_error(&self) -> f64 {
        (self.params as f64 - self.target).abs() / self.target
    }
}

fn sized(template: &ModelConfig, layers: usize, d: usize) -> ModelConfig {
    let ratio = |w: usize| ((w as f64 / template.d_model as f64) * d as f64).round().max(1.0) as usize;
    let mut c = template.clone();
    c.layers = layers;
    c.d_model = d;
    c.phi_hidden = ratio(template.phi_hidden);
    c.ffn_hidden = ratio(template.ffn_hidden);
    c.head_hidden = template.head_hidden.map(ratio);
    c
}

/// For each target size, the depth in `1..=max_layers` and width (a multiple
/// of the head count) whose parameter count is closest in relative terms.
/// Hidden widths keep the template's ratios to `d_model`. Ties go to the
/// shallower model.
pub fn model_ladder(template: &ModelConfig, targets: &[f64], max_layers: usize) -> Result<Vec<Rung>, ScalingError> {
    template.validate()?;
    let h = template.heads;
    targets
        .iter()
        .map(|&target| {
            if !(target >= 1.0 && target.is_finite()) {
                return Err(ScalingError::Config(format!("target size {target} must be finite and >= 1")));
            }
            let count = |l: usize, m: usize| param_count(&sized(template, l, m * h)).total;
            let mut best: Option<Rung> = None;
            for l in 1..=max_layers {
                let mut hi = 1usize;
                while (count(l, hi) as f64) < target {
                    hi *= 2;
                }
                let mut lo = hi / 2;
                while hi - lo > 1 {
                    let mid = (lo + hi) / 2;
                    if (count(l, mid) as f64) < target {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                for m in [lo, hi].into_iter().filter(|&m| m >= 1) {
                    let config = sized(template, l, m * h);
                    let rung = Rung {
                        params: param_count(&config).total,
                        config,
                        target,
                    };
                    if best.as_ref().is_none_or(|b| rung.rel_error() < b.rel_error()) {
                        best = Some(rung);
                    }
                }
            }
            best.ok_or(ScalingError::Unreachable { target, max_layers })
        })
        .collect()
}
