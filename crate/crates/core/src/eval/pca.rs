use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::numerics::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pca2 {
    /// `n x 2` projected coordinates.
    pub coords: Vec<[f64; 2]>,
    /// Unit principal axes, each of length `d`.
    pub axes: [Vec<f64>; 2],
    /// Sample variance along each axis, descending.
    pub variance: [f64; 2],
    pub mean: Vec<f64>,
}

/// Top-two principal components via SVD of the centered data. Each axis is
/// signed so its largest-magnitude entry is positive.
pub fn pca2(x: &Matrix) -> Result<Pca2, EvalError> {
    let (n, d) = x.shape();
    if n < 2 {
        return Err(EvalError::TooFewSamples { have: n, need: 2 });
    }
    if !x.is_finite() {
        return Err(EvalError::NonFinite);
    }
    let mean: Vec<f64> = (0..d).map(|j| (0..n).map(|i| x.get(i, j)).sum::<f64>() / n as f64).collect();
    let c = DMatrix::from_fn(n, d, |i, j| x.get(i, j) - mean[j]);
    let svd = c.clone().svd(false, true);
    let vt = svd.v_t.expect("requested");
    let mut idx: Vec<usize> = (0..svd.singular_values.len()).collect();
    idx.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let top = svd.singular_values[idx[0]];
    if !(top > 1e-12 * (1.0 + c.abs().max())) {
        return Err(EvalError::RankZero);
    }
    let axis = |k: usize| -> (Vec<f64>, f64) {
        let Some(&r) = idx.get(k) else {
            return (vec![0.0; d], 0.0);
        };
        let mut a: Vec<f64> = (0..d).map(|j| vt[(r, j)]).collect();
        let lead = a.iter().copied().fold(0.0, |m: f64, v| if v.abs() > m.abs() { v } else { m });
        if lead < 0.0 {
            a.iter_mut().for_each(|v| *v = -*v);
        }
        let s = svd.singular_values[r];
        (a, s * s / (n - 1) as f64)
    };
    let (a0, v0) = axis(0);
    let (a1, v1) = axis(1);
    let coords = (0..n)
        .map(|i| {
            let row = c.row(i);
            let p = |a: &[f64]| row.iter().zip(a).map(|(x, y)| x * y).sum::<f64>();
            [p(&a0), p(&a1)]
        })
        .collect();
    Ok(Pca2 {
        coords,
        axes: [a0, a1],
        variance: [v0, v1],
        mean,
    })
}
