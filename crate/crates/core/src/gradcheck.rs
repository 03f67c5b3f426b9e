//! Finite-difference verification of autodiff gradients.

use crate::error::Result;
use crate::graph::{Gradients, ParamId, ParamStore};

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Worst `|a − n| / max(|a|, |n|, 1e-8)` over every scalar parameter.
    pub max_relative_error: f64,
    pub worst_param: Option<String>,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

/// Compares the gradient returned by `loss` against central differences
/// `(f(θ+eps) − f(θ−eps)) / 2eps` for every scalar in `params`.
///
/// `loss` must be deterministic: any dropout has to be disabled or driven by
/// a freshly seeded generator on every call.
pub fn grad_check<F>(loss: F, params: &ParamStore, eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&ParamStore) -> Result<(f64, Gradients)>,
{
    assert!(eps > 0.0, "grad_check needs a positive step");
    let (_, analytic) = loss(params)?;
    let mut work = params.clone();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst_param: None,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    let ids: Vec<ParamId> = params.ids().collect();
    for id in ids {
        for i in 0..params.get(id).len() {
            let orig = params.get(id).data()[i];
            work.get_mut(id).data_mut()[i] = orig + eps;
            let (plus, _) = loss(&work)?;
            work.get_mut(id).data_mut()[i] = orig - eps;
            let (minus, _) = loss(&work)?;
            work.get_mut(id).data_mut()[i] = orig;

            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic.at(id, i);
            let rel = relative_error(a, numeric);
            report.checked += 1;
            if rel > report.max_relative_error {
                report.max_relative_error = rel;
                report.worst_param = Some(params.name(id).to_string());
                report.worst_index = i;
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}

pub fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-8)
}
