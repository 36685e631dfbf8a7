//! Central finite-difference check of recorded gradients.

use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};

/// Worst disagreement found by [`grad_check`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(input index, element index)` of the worst element.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

/// Denominator floor of [`relative_error`]. Central differences at
/// `eps = 1e-5` carry absolute noise near 1e-11, so gradients far below this
/// floor cannot be resolved in relative terms.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-6;

/// `|a - n| / max(|a|, |n|, RELATIVE_ERROR_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR)
}

/// Compares the gradient recorded by `f` against central differences.
///
/// `f` receives a fresh graph and one leaf per entry of `inputs` (each marked
/// as requiring a gradient) and must return a scalar node.
pub fn grad_check<F>(f: F, inputs: &[Tensor], eps: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|t| g.input(t)).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.scalar_value(out))
    };

    let leaves: Vec<Tensor> = inputs
        .iter()
        .map(|t| t.clone().with_requires_grad(true))
        .collect();
    let mut g = Graph::new();
    let vars: Vec<Var> = leaves.iter().map(|t| g.input(t)).collect();
    let out = f(&mut g, &vars)?;
    let base = g.scalar_value(out);
    if !base.is_finite() {
        return Err(Error::NonFinite(format!("function value {base} at the base point")));
    }
    let grads = g.backward(out)?;

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
        tolerance: tol,
    };
    let mut probe = leaves.clone();
    for (i, var) in vars.iter().enumerate() {
        let analytic = grads.get_or_zeros(*var, leaves[i].numel());
        for j in 0..leaves[i].numel() {
            let x0 = leaves[i].data()[j];
            probe[i].data_mut()[j] = x0 + eps;
            let plus = eval(&probe)?;
            probe[i].data_mut()[j] = x0 - eps;
            let minus = eval(&probe)?;
            probe[i].data_mut()[j] = x0;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic[j];
            if !numeric.is_finite() || !a.is_finite() {
                return Err(Error::NonFinite(format!(
                    "gradient of input {i} element {j}: analytic {a}, numeric {numeric}"
                )));
            }
            let err = relative_error(a, numeric);
            report.checked += 1;
            if err > report.max_rel_error || report.checked == 1 {
                report.max_rel_error = err;
                report.worst = (i, j);
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}
