use super::{NumericsError, ParamStore, Tape, Var};

/// Outcome of comparing tape gradients with central finite differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
}

/// Compares analytic gradients of `loss` against central differences with step `h`.
///
/// Relative error per entry is `|a - n| / max(|a|, |n|, floor)`; the floor keeps
/// entries whose true gradient is numerically zero from dominating.
pub fn check_gradients(
    store: &ParamStore,
    h: f64,
    floor: f64,
    loss: impl Fn(&ParamStore, &mut Tape) -> Result<Var, NumericsError>,
) -> Result<GradCheckReport, NumericsError> {
    let mut tape = Tape::new();
    let l = loss(store, &mut tape)?;
    let grads = tape.backward(l)?;

    let eval = |s: &ParamStore| -> Result<f64, NumericsError> {
        let mut t = Tape::new();
        let l = loss(s, &mut t)?;
        t.check_finite()?;
        Ok(t.value(l).get(0, 0))
    };

    let mut work = store.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
    };
    for id in store.ids() {
        let Ok(analytic) = grads.get(id) else { continue };
        for j in 0..store.get(id).len() {
            let orig = store.get(id).as_slice()[j];
            work.get_mut(id).as_mut_slice()[j] = orig + h;
            let up = eval(&work)?;
            work.get_mut(id).as_mut_slice()[j] = orig - h;
            let down = eval(&work)?;
            work.get_mut(id).as_mut_slice()[j] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic.as_slice()[j];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            report.checked += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((store.name(id).to_string(), j));
            }
        }
    }
    Ok(report)
}
