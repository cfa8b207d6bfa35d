//! Central finite-difference checks of analytic parameter gradients.
//!
//! The numeric side only evaluates forward passes on perturbed copies of the
//! parameter store; it never touches [`Graph::backward`].

use crate::graph::{Graph, Var};
use crate::params::{ParamId, ParamStore};

/// Result of comparing analytic and numeric gradients.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Largest `|analytic − numeric| / max(|analytic|, |numeric|, floor)`.
    pub max_rel_error: f64,
    /// Parameter name and flat index where the maximum occurred.
    pub worst: String,
    pub checked: usize,
}

/// Denominator floor for relative errors; keeps near-zero gradients from
/// turning round-off into large ratios.
pub const REL_FLOOR: f64 = 1e-6;

/// Checks every scalar of `ids` with central differences of width `2·step`.
pub fn check_param_gradients(
    store: &ParamStore,
    ids: &[ParamId],
    step: f64,
    loss: impl Fn(&mut Graph) -> Var,
) -> GradCheckReport {
    let analytic: Vec<Vec<f64>> = {
        let mut g = Graph::with_trainable(store, ids);
        let l = loss(&mut g);
        let grads = g.backward(l);
        ids.iter()
            .map(|&id| match grads.param(id) {
                Some(t) => t.data().to_vec(),
                None => vec![0.0; store.get(id).len()],
            })
            .collect()
    };

    let eval = |s: &ParamStore| {
        let mut g = Graph::inference(s);
        let l = loss(&mut g);
        g.value(l).item()
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: String::new(),
        checked: 0,
    };
    let mut work = store.clone();
    for (k, &id) in ids.iter().enumerate() {
        for j in 0..store.get(id).len() {
            let orig = store.get(id).data()[j];
            work.get_mut(id).data_mut()[j] = orig + step;
            let plus = eval(&work);
            work.get_mut(id).data_mut()[j] = orig - step;
            let minus = eval(&work);
            work.get_mut(id).data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic[k][j];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
            report.checked += 1;
            if rel > report.max_rel_error || report.worst.is_empty() {
                report.max_rel_error = report.max_rel_error.max(rel);
                report.worst = format!(
                    "{}[{j}] analytic={a:.6e} numeric={numeric:.6e}",
                    store.entry(id).name
                );
            }
        }
    }
    report
}
