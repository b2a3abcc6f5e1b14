use super::EvalError;

fn check_lengths(a: usize, b: usize) -> Result<(), EvalError> {
    if a != b {
        return Err(EvalError::LengthMismatch { left: a, right: b });
    }
    if a == 0 {
        return Err(EvalError::Empty);
    }
    Ok(())
}

/// Area under the precision-recall curve as average precision: the sum of
/// `(R_t - R_{t-1}) * P_t` over distinct score thresholds, descending. Tied
/// scores enter together. Labels are positive when `> 0.5`.
pub fn prauc(scores: &[f64], labels: &[f64]) -> Result<f64, EvalError> {
    check_lengths(scores.len(), labels.len())?;
    if scores.iter().any(|s| s.is_nan()) {
        return Err(EvalError::NonFinite);
    }
    let pos = labels.iter().filter(|&&y| y > 0.5).count();
    if pos == 0 {
        return Err(EvalError::NoPositives);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut seen, mut ap) = (0usize, 0usize, 0.0);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        let before = tp;
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] > 0.5 {
                tp += 1;
            }
            seen += 1;
            i += 1;
        }
        if tp > before {
            ap += (tp - before) as f64 / pos as f64 * (tp as f64 / seen as f64);
        }
    }
    Ok(ap)
}

pub fn mae(preds: &[f64], targets: &[f64]) -> Result<f64, EvalError> {
    check_lengths(preds.len(), targets.len())?;
    Ok(preds.iter().zip(targets).map(|(p, t)| (p - t).abs()).sum::<f64>() / preds.len() as f64)
}

/// Fraction of positive labels.
pub fn class_rate(labels: &[f64]) -> f64 {
    labels.iter().filter(|&&y| y > 0.5).count() as f64 / labels.len().max(1) as f64
}
