//! Central-difference verification of analytic gradients.

use crate::{Error, Result};

/// Outcome of a gradient check: the worst relative error and where it was.
#[derive(Debug, Clone, Copy)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub checked: usize,
}

/// Compares `analytic` against central finite differences of `f` over every
/// parameter. The relative error of entry `i` is
/// `|analytic[i] - fd[i]| / max(1, |analytic[i]|)`.
///
/// `f` must be deterministic; `step` must be positive.
pub fn grad_check<F>(f: F, params: &[f64], analytic: &[f64], step: f64) -> Result<GradCheckReport>
where
    F: Fn(&[f64]) -> f64,
{
    let all: Vec<usize> = (0..params.len()).collect();
    grad_check_sampled(f, params, analytic, step, &all)
}

/// Same as [`grad_check`] but only over the given parameter indices. Large
/// models make the full sweep quadratic in cost; a random subset keeps the
/// check honest and fast.
pub fn grad_check_sampled<F>(
    f: F,
    params: &[f64],
    analytic: &[f64],
    step: f64,
    indices: &[usize],
) -> Result<GradCheckReport>
where
    F: Fn(&[f64]) -> f64,
{
    if step <= 0.0 || !step.is_finite() {
        return Err(Error::Usage(format!("grad_check step must be positive, got {step}")));
    }
    if analytic.len() != params.len() {
        return Err(Error::Usage(format!(
            "analytic gradient length {} does not match parameter count {}",
            analytic.len(),
            params.len()
        )));
    }

    let mut scratch = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: 0,
        checked: indices.len(),
    };
    for &i in indices {
        let saved = scratch[i];
        scratch[i] = saved + step;
        let up = f(&scratch);
        scratch[i] = saved - step;
        let down = f(&scratch);
        scratch[i] = saved;
        let fd = (up - down) / (2.0 * step);
        let rel = (analytic[i] - fd).abs() / analytic[i].abs().max(1.0);
        if rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst_index = i;
        }
    }
    Ok(report)
}
