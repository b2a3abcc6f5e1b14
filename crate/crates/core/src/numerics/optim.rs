use super::{Gradients, Matrix, NumericsError, ParamId, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled weight decay, applied as `p -= lr * wd * p`.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// First and second moments per parameter plus the step counter.
#[derive(Debug, Clone, Default)]
pub struct OptimizerState {
    pub step: u64,
    moments: Vec<Option<(Matrix, Matrix)>>,
}

impl OptimizerState {
    pub fn new() -> Self {
        Self::default()
    }
}

/// One bias-corrected Adam update. `lr` overrides `cfg.lr` (for schedules).
///
/// Frozen parameters and parameters absent from `grads` are left untouched.
pub fn adam_step(
    params: &mut ParamStore,
    grads: &Gradients,
    state: &mut OptimizerState,
    cfg: &AdamConfig,
    lr: f64,
) -> Result<(), NumericsError> {
    for (id, g) in grads.iter() {
        if id.0 >= params.len() {
            return Err(NumericsError::UnknownParam { id: id.0 });
        }
        let p = params.get(*id);
        if p.shape() != g.shape() {
            return Err(NumericsError::ShapeMismatch {
                op: "adam_step",
                left: p.shape(),
                right: g.shape(),
            });
        }
        g.check_finite("adam_step")?;
    }
    state.step += 1;
    if state.moments.len() < params.len() {
        state.moments.resize(params.len(), None);
    }
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for i in 0..params.len() {
        let id = ParamId(i);
        if params.is_frozen(id) {
            continue;
        }
        let Ok(g) = grads.get(id) else { continue };
        let (m, v) = state.moments[i].get_or_insert_with(|| {
            (Matrix::zeros(g.rows(), g.cols()), Matrix::zeros(g.rows(), g.cols()))
        });
        let p = params.get_mut(id);
        let (ps, ms, vs) = (p.as_mut_slice(), m.as_mut_slice(), v.as_mut_slice());
        for (j, &gj) in g.as_slice().iter().enumerate() {
            ms[j] = cfg.beta1 * ms[j] + (1.0 - cfg.beta1) * gj;
            vs[j] = cfg.beta2 * vs[j] + (1.0 - cfg.beta2) * gj * gj;
            let mhat = ms[j] / bc1;
            let vhat = vs[j] / bc2;
            ps[j] -= lr * (mhat / (vhat.sqrt() + cfg.eps) + cfg.weight_decay * ps[j]);
        }
    }
    Ok(())
}
