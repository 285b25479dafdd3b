//! Central finite-difference verification of analytic gradients.

use super::Network;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckReport {
    /// `max_i |a_i - n_i| / max(|a_i|, |n_i|, 1e-12)`.
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

const REL_FLOOR: f64 = 1e-12;

fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR)
}

/// Compares `analytic` against central differences of `loss` around `x`.
pub fn check_gradient<F>(
    x: &[f64],
    analytic: &[f64],
    eps: f64,
    mut loss: F,
) -> Result<GradCheckReport>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::Usage(format!(
            "finite-difference step must be positive, got {eps}"
        )));
    }
    if analytic.len() != x.len() {
        return Err(Error::Usage(format!(
            "analytic gradient has {} entries for {} parameters",
            analytic.len(),
            x.len()
        )));
    }
    let mut probe = x.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: x.len(),
    };
    for i in 0..x.len() {
        probe[i] = x[i] + eps;
        let plus = loss(&probe)?;
        probe[i] = x[i] - eps;
        let minus = loss(&probe)?;
        probe[i] = x[i];
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite loss when perturbing parameter {i}"
            )));
        }
        let numeric = (plus - minus) / (2.0 * eps);
        let err = relative_error(analytic[i], numeric);
        if err > report.max_rel_error || i == 0 {
            report.max_rel_error = err;
            report.worst_index = i;
            report.analytic = analytic[i];
            report.numeric = numeric;
        }
    }
    Ok(report)
}

/// Finite-difference check of a network objective with respect to all of the
/// network's parameters.
///
/// `loss` evaluates the objective for a given parameterisation; `analytic` is
/// the gradient at the network's current parameters.
pub fn gradient_check<F>(
    net: &Network,
    analytic: &[f64],
    eps: f64,
    loss: F,
) -> Result<GradCheckReport>
where
    F: Fn(&Network) -> Result<f64>,
{
    let mut scratch = net.clone();
    check_gradient(net.params(), analytic, eps, |p| {
        scratch.params_mut().copy_from_slice(p);
        loss(&scratch)
    })
}
