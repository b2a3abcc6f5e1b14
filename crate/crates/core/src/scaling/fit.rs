use levenberg_marquardt::{LeastSquaresProblem, LevenbergMarquardt};
use nalgebra::{Dyn, OMatrix, OVector, Owned, U5};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ScalingError, ScalingObservation};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitOptions {
    pub starts: usize,
    pub seed: u64,
    pub min_points: usize,
    /// Required span of both N and D, in decades.
    pub min_decades: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            starts: 16,
            seed: 0,
            min_points: 8,
            min_decades: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub l_inf: f64,
    pub n_c: f64,
    pub alpha_n: f64,
    pub d_c: f64,
    pub alpha_d: f64,
    /// Sum of squared log-loss residuals.
    pub rss: f64,
    /// `ln L_fit - ln L_obs`, in observation order.
    pub residuals: Vec<f64>,
}

impl ScalingFit {
    pub fn eval(&self, n: f64, d: f64) -> f64 {
        law(self.l_inf, self.n_c, self.alpha_n, self.d_c, self.alpha_d, n, d)
    }

    pub fn n_term(&self, n: f64) -> f64 {
        (self.n_c / n).powf(self.alpha_n)
    }

    pub fn d_term(&self, d: f64) -> f64 {
        (self.d_c / d).powf(self.alpha_d)
    }
}

pub(crate) fn law(l_inf: f64, n_c: f64, a_n: f64, d_c: f64, a_d: f64, n: f64, d: f64) -> f64 {
    l_inf + (n_c / n).powf(a_n) + (d_c / d).powf(a_d)
}

struct LogLaw {
    ln_n: Vec<f64>,
    ln_d: Vec<f64>,
    ln_l: Vec<f64>,
    theta: OVector<f64, U5>,
}

impl LogLaw {
    /// `ln` of the modelled loss and the softmax weights of its three terms,
    /// computed as a log-sum-exp so extreme parameters stay finite.
    fn terms(&self, i: usize) -> (f64, [f64; 3], f64, f64) {
        let t = &self.theta;
        let xn = t[1] - self.ln_n[i];
        let xd = t[3] - self.ln_d[i];
        let z = [t[0], t[2].exp() * xn, t[4].exp() * xd];
        let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e = z.map(|v| (v - m).exp());
        let s: f64 = e.iter().sum();
        (m + s.ln(), e.map(|v| v / s), xn, xd)
    }
}

impl LeastSquaresProblem<f64, Dyn, U5> for LogLaw {
    type ResidualStorage = Owned<f64, Dyn>;
    type JacobianStorage = Owned<f64, Dyn, U5>;
    type ParameterStorage = Owned<f64, U5>;

    fn set_params(&mut self, x: &OVector<f64, U5>) {
        self.theta.copy_from(x);
    }

    fn params(&self) -> OVector<f64, U5> {
        self.theta
    }

    fn residuals(&self) -> Option<OVector<f64, Dyn>> {
        let r = OVector::<f64, Dyn>::from_iterator(
            self.ln_l.len(),
            (0..self.ln_l.len()).map(|i| self.terms(i).0 - self.ln_l[i]),
        );
        r.iter().all(|v| v.is_finite()).then_some(r)
    }

    fn jacobian(&self) -> Option<OMatrix<f64, Dyn, U5>> {
        let (a_n, a_d) = (self.theta[2].exp(), self.theta[4].exp());
        let mut j = OMatrix::<f64, Dyn, U5>::zeros(self.ln_l.len());
        for i in 0..self.ln_l.len() {
            let (_, w, xn, xd) = self.terms(i);
            j[(i, 0)] = w[0];
            j[(i, 1)] = w[1] * a_n;
            j[(i, 2)] = w[1] * a_n * xn;
            j[(i, 3)] = w[2] * a_d;
            j[(i, 4)] = w[2] * a_d * xd;
        }
        j.iter().all(|v| v.is_finite()).then_some(j)
    }
}

fn decades(v: impl Iterator<Item = f64> + Clone) -> f64 {
    let lo = v.clone().fold(f64::INFINITY, f64::min);
    let hi = v.fold(f64::NEG_INFINITY, f64::max);
    (hi / lo).log10()
}

fn log_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    rng.random_range(lo.ln()..=hi.ln())
}

/// Multi-start Levenberg-Marquardt on log-loss residuals over log-parameters.
/// Returns the lowest-RSS fit; ties keep the earliest start.
pub fn fit_joint(obs: &[ScalingObservation], opts: &FitOptions) -> Result<ScalingFit, ScalingError> {
    if opts.starts == 0 {
        return Err(ScalingError::Config("at least one start is required".into()));
    }
    if obs.len() < opts.min_points {
        return Err(ScalingError::TooFewPoints {
            have: obs.len(),
            need: opts.min_points,
        });
    }
    for o in obs {
        o.validate()?;
    }
    let n_dec = decades(obs.iter().map(|o| o.n));
    let d_dec = decades(obs.iter().map(|o| o.d));
    if n_dec < opts.min_decades || d_dec < opts.min_decades {
        return Err(ScalingError::InsufficientSpan {
            n_decades: n_dec,
            d_decades: d_dec,
            need: opts.min_decades,
        });
    }
    let min = |f: fn(&ScalingObservation) -> f64| obs.iter().map(f).fold(f64::INFINITY, f64::min);
    let max = |f: fn(&ScalingObservation) -> f64| obs.iter().map(f).fold(f64::NEG_INFINITY, f64::max);
    let (l_min, n_min, n_max, d_min, d_max) = (min(|o| o.loss), min(|o| o.n), max(|o| o.n), min(|o| o.d), max(|o| o.d));
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let lm = LevenbergMarquardt::new()
        .with_ftol(1e-15)
        .with_xtol(1e-15)
        .with_gtol(1e-15)
        .with_patience(2000);
    let mut best: Option<(f64, OVector<f64, U5>)> = None;
    for _ in 0..opts.starts {
        let start = OVector::<f64, U5>::from([
            log_uniform(&mut rng, 1e-3 * l_min, l_min),
            log_uniform(&mut rng, 1e-4 * n_min, 10.0 * n_max),
            log_uniform(&mut rng, 0.05, 2.0),
            log_uniform(&mut rng, 1e-4 * d_min, 10.0 * d_max),
            log_uniform(&mut rng, 0.05, 2.0),
        ]);
        let problem = LogLaw {
            ln_n: obs.iter().map(|o| o.n.ln()).collect(),
            ln_d: obs.iter().map(|o| o.d.ln()).collect(),
            ln_l: obs.iter().map(|o| o.loss.ln()).collect(),
            theta: start,
        };
        let (solved, _) = lm.minimize(problem);
        let Some(r) = solved.residuals() else { continue };
        let rss = r.norm_squared();
        if best.as_ref().is_none_or(|(b, _)| rss < *b) {
            best = Some((rss, solved.theta));
        }
    }
    let (rss, t) = best.ok_or_else(|| ScalingError::Config("every start diverged".into()))?;
    let mut fit = ScalingFit {
        l_inf: t[0].exp(),
        n_c: t[1].exp(),
        alpha_n: t[2].exp(),
        d_c: t[3].exp(),
        alpha_d: t[4].exp(),
        rss,
        residuals: Vec::new(),
    };
    fit.residuals = obs.iter().map(|o| fit.eval(o.n, o.d).ln() - o.loss.ln()).collect();
    Ok(fit)
}

/// Coefficient of determination of `fit` against `obs` in log-loss space.
/// Constant observations give 1 on an exact fit and 0 otherwise.
pub fn log_r2(fit: &ScalingFit, obs: &[ScalingObservation]) -> f64 {
    let y: Vec<f64> = obs.iter().map(|o| o.loss.ln()).collect();
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let tss: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    let rss: f64 = obs
        .iter()
        .zip(&y)
        .map(|(o, v)| (fit.eval(o.n, o.d).ln() - v).powi(2))
        .sum();
    if tss > 0.0 {
        1.0 - rss / tss
    } else if rss == 0.0 {
        1.0
    } else {
        0.0
    }
}

/// `L - L_inf = (scale / x)^exponent`, fitted by least squares in log-log space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerFit {
    pub scale: f64,
    pub exponent: f64,
    /// Log-log coefficient of determination.
    pub r2: f64,
    pub points: usize,
}

fn fit_power(points: &[(f64, f64)], l_inf: f64) -> Result<PowerFit, ScalingError> {
    if points.len() < 3 {
        return Err(ScalingError::TooFewPoints {
            have: points.len(),
            need: 3,
        });
    }
    let mut xs = Vec::with_capacity(points.len());
    let mut ys = Vec::with_capacity(points.len());
    for &(x, l) in points {
        let excess = l - l_inf;
        if !(excess > 0.0 && x > 0.0) {
            return Err(ScalingError::Config(format!("loss {l} does not exceed the floor {l_inf}")));
        }
        xs.push(x.ln());
        ys.push(excess.ln());
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(ScalingError::Config("all points share one abscissa".into()));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let exponent = -slope;
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let sse: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    Ok(PowerFit {
        scale: (intercept / exponent).exp(),
        exponent,
        r2: if syy > 0.0 { 1.0 - sse / syy } else { 1.0 },
        points: xs.len(),
    })
}

/// Power law in N over the observations at the largest D.
pub fn fit_power_n(obs: &[ScalingObservation], l_inf: f64) -> Result<PowerFit, ScalingError> {
    let top = obs.iter().map(|o| o.d).fold(f64::NEG_INFINITY, f64::max);
    let pts: Vec<(f64, f64)> = obs.iter().filter(|o| o.d == top).map(|o| (o.n, o.loss)).collect();
    fit_power(&pts, l_inf)
}

/// Power law in D over the observations at the largest N.
pub fn fit_power_d(obs: &[ScalingObservation], l_inf: f64) -> Result<PowerFit, ScalingError> {
    let top = obs.iter().map(|o| o.n).fold(f64::NEG_INFINITY, f64::max);
    let pts: Vec<(f64, f64)> = obs.iter().filter(|o| o.n == top).map(|o| (o.d, o.loss)).collect();
    fit_power(&pts, l_inf)
}
