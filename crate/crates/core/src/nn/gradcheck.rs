//! Central finite-difference verification of analytic gradients.
//!
//! The forward evaluation is shared with the implementation (inherent to
//! finite differences); the *backward* path under test plays no part in the
//! difference quotient.

use rand::Rng;

use ndarray::ArrayD;

use super::params::ParamSet;

#[derive(Debug)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    pub failures: Vec<GradCheckFailure>,
}

#[derive(Debug)]
pub struct GradCheckFailure {
    pub param: String,
    pub flat_index: usize,
    pub analytic: f64,
    pub finite_diff: f64,
    pub rel_err: f64,
}

impl GradCheckReport {
    pub fn ok(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Compare analytic gradients against central differences on a random sample
/// of at least `fraction` of the trainable scalars (minimum one per entry
/// when the entry is sampled at all).
///
/// `loss` must be a pure function of the parameter values. `grads` is the
/// analytic gradient per ParamSet entry, aligned with entry order.
pub fn check<F>(
    params: &mut ParamSet,
    grads: &[ArrayD<f64>],
    mut loss: F,
    fraction: f64,
    rel_tol: f64,
    rng: &mut impl Rng,
) -> GradCheckReport
where
    F: FnMut(&ParamSet) -> f64,
{
    let h = 1e-5;
    let mut checked = 0usize;
    let mut max_rel_err = 0.0f64;
    let mut failures = Vec::new();

    let names: Vec<String> = params.names().to_vec();
    for (i, name) in names.iter().enumerate() {
        if !ParamSet::is_trainable(name) {
            continue;
        }
        let len = params.value_at(i).len();
        let n_samples = ((len as f64 * fraction).ceil() as usize).clamp(1, len);
        for _ in 0..n_samples {
            let j = rng.random_range(0..len);
            let orig = params.value_at(i).as_slice().unwrap()[j];
            let step = h * orig.abs().max(1.0);

            params.value_at_mut(i).as_slice_mut().unwrap()[j] = orig + step;
            let lp = loss(params);
            params.value_at_mut(i).as_slice_mut().unwrap()[j] = orig - step;
            let lm = loss(params);
            params.value_at_mut(i).as_slice_mut().unwrap()[j] = orig;

            let fd = (lp - lm) / (2.0 * step);
            let an = grads[i].as_slice().unwrap()[j];
            let denom = fd.abs().max(an.abs()).max(1e-6);
            let rel = (fd - an).abs() / denom;
            checked += 1;
            max_rel_err = max_rel_err.max(rel);
            if rel > rel_tol {
                failures.push(GradCheckFailure {
                    param: name.clone(),
                    flat_index: j,
                    analytic: an,
                    finite_diff: fd,
                    rel_err: rel,
                });
            }
        }
    }

    GradCheckReport {
        checked,
        max_rel_err,
        failures,
    }
}
