use super::{Gradients, NumericsError, ParamStore};

/// Outcome of a finite-difference comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub analytic: f64,
    pub numeric: f64,
    pub coordinates: usize,
    /// Largest |analytic - numeric| over all coordinates.
    pub max_abs_error: f64,
    /// Coordinates whose relative error is at or above `1e-4`.
    pub above_tolerance: usize,
}

/// Relative error with the denominator floored at `1e-8`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares the analytic gradient from `loss_fn` against central differences
/// on every coordinate of every parameter.
///
/// `loss_fn` must return the loss and its gradient for the given parameters;
/// it is evaluated twice at the base point and must agree bitwise.
pub fn grad_check<F, E>(
    loss_fn: F,
    params: &ParamStore,
    eps: f64,
) -> Result<GradCheckReport, NumericsError>
where
    F: Fn(&ParamStore) -> Result<(f64, Gradients), E>,
    E: std::fmt::Display,
{
    if !(eps > 0.0) {
        return Err(NumericsError::Domain(format!(
            "finite-difference step {eps} must be positive"
        )));
    }
    let eval = |p: &ParamStore| {
        loss_fn(p).map_err(|e| NumericsError::Domain(format!("loss evaluation failed: {e}")))
    };
    let (first, analytic) = eval(params)?;
    let (second, _) = eval(params)?;
    if first.to_bits() != second.to_bits() {
        return Err(NumericsError::NonDeterministic { first, second });
    }

    let mut work = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        analytic: 0.0,
        numeric: 0.0,
        coordinates: 0,
        max_abs_error: 0.0,
        above_tolerance: 0,
    };
    let ids: Vec<_> = params.ids().collect();
    for id in ids {
        for j in 0..params.get(id).len() {
            let base = params.get(id).data()[j];
            work.get_mut(id).data_mut()[j] = base + eps;
            let (plus, _) = eval(&work)?;
            work.get_mut(id).data_mut()[j] = base - eps;
            let (minus, _) = eval(&work)?;
            work.get_mut(id).data_mut()[j] = base;

            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic.get(id).data()[j];
            let err = relative_error(a, numeric);
            report.coordinates += 1;
            report.max_abs_error = report.max_abs_error.max((a - numeric).abs());
            report.above_tolerance += (err >= 1e-4) as usize;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = err;
                report.worst = Some((params.name(id).to_string(), j));
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}
