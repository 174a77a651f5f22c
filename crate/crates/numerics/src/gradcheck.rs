//! Central finite-difference gradient checking.
//!
//! Used by the test suites of this crate and of the model crate. The check
//! perturbs parameter values directly and never consults the tape's backward
//! rules, so it is an independent oracle for them.

use crate::{ParamStore, Result};

/// Largest disagreement found by [`check`].
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

/// Relative error with an absolute floor so that near-zero gradients compare
/// on an absolute scale.
pub fn rel_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Compare analytic gradients against central differences of `loss_fn`.
///
/// `loss_fn` must evaluate the loss for the store's current values without
/// side effects; `analytic` runs a forward/backward pass filling the store's
/// gradients.
pub fn check<F, G>(store: &mut ParamStore<f64>, step: f64, floor: f64, mut loss_fn: F, analytic: G) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore<f64>) -> Result<f64>,
    G: FnOnce(&mut ParamStore<f64>) -> Result<()>,
{
    store.zero_grads();
    analytic(store)?;
    let grads: Vec<Vec<f64>> = store.iter().map(|p| p.grad.data().to_vec()).collect();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    let ids: Vec<_> = (0..store.len()).map(crate::ParamId).collect();
    for (pi, id) in ids.into_iter().enumerate() {
        let n = store.get(id).value.len();
        for i in 0..n {
            let original = store.get(id).value.data()[i];
            let mut plus = (*store.get(id).value).clone();
            plus.data_mut()[i] = original + step;
            store.set_value(id, plus)?;
            let up = loss_fn(store)?;
            let mut minus = (*store.get(id).value).clone();
            minus.data_mut()[i] = original - step;
            store.set_value(id, minus)?;
            let down = loss_fn(store)?;
            let mut restored = (*store.get(id).value).clone();
            restored.data_mut()[i] = original;
            store.set_value(id, restored)?;

            let numeric = (up - down) / (2.0 * step);
            let analytic = grads[pi][i];
            let err = rel_error(analytic, numeric, floor);
            report.checked += 1;
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst_param = store.get(id).name.clone();
                report.worst_index = i;
                report.analytic = analytic;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}
