//! Central finite-difference validation for analytic gradients.

use crate::error::{Error, Result};
use crate::objectives::Objective;
use crate::vecmath::ParamVector;

/// Step and tolerance settings for a finite-difference check.
///
/// The per-coordinate step is `max(step_rel * |theta_i|, step_abs)`; only
/// central differences are implemented (O(h^2) accuracy is required to
/// validate gradients at 1e-6 relative).
#[derive(Debug, Clone)]
pub struct FdSpec {
    pub step_rel: f64,
    pub step_abs: f64,
    pub tol_rel: f64,
    pub tol_abs: f64,
}

impl Default for FdSpec {
    fn default() -> Self {
        Self {
            step_rel: 1e-5,
            step_abs: 1e-7,
            tol_rel: 1e-6,
            tol_abs: 1e-8,
        }
    }
}

impl FdSpec {
    pub fn with_tolerances(tol_rel: f64, tol_abs: f64) -> Self {
        Self {
            tol_rel,
            tol_abs,
            ..Self::default()
        }
    }
}

/// Comparison of an analytic gradient against its finite-difference estimate.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    /// Coordinate with the largest relative error, for diagnosing failures.
    pub worst_index: usize,
    pub pass: bool,
}

/// Coordinate-wise central difference `(obj(x + h e_i) - obj(x - h e_i)) / 2h`.
pub fn fd_gradient(obj: &dyn Objective, theta: &ParamVector, spec: &FdSpec) -> Result<ParamVector> {
    assert_eq!(theta.dim(), obj.dim(), "fd_gradient: dimension mismatch");
    let base = theta.as_slice();
    let mut grad = vec![0.0; theta.dim()];
    let mut work = base.to_vec();
    for i in 0..theta.dim() {
        let h = (spec.step_rel * base[i].abs()).max(spec.step_abs);
        work[i] = base[i] + h;
        let plus = obj.value(&ParamVector::new(work.clone())?);
        work[i] = base[i] - h;
        let minus = obj.value(&ParamVector::new(work.clone())?);
        work[i] = base[i];
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite {
                context: format!("finite-difference evaluation at coordinate {i}"),
            });
        }
        grad[i] = (plus - minus) / (2.0 * h);
    }
    ParamVector::new(grad)
}

/// Compares `obj.gradient` against [`fd_gradient`]; passes iff every
/// coordinate satisfies `|analytic - fd| <= max(tol_abs, tol_rel * scale)`
/// with `scale = max(|analytic|, |fd|)`.
pub fn check(obj: &dyn Objective, theta: &ParamVector, spec: &FdSpec) -> Result<GradCheckReport> {
    let analytic = obj.gradient(theta);
    let numeric = fd_gradient(obj, theta, spec)?;
    let mut max_rel: f64 = 0.0;
    let mut max_abs: f64 = 0.0;
    let mut worst = 0;
    let mut pass = true;
    for i in 0..theta.dim() {
        let a = analytic[i];
        let n = numeric[i];
        let abs_err = (a - n).abs();
        let scale = a.abs().max(n.abs());
        let rel_err = if scale > 0.0 { abs_err / scale } else { 0.0 };
        if rel_err > max_rel {
            max_rel = rel_err;
            worst = i;
        }
        max_abs = max_abs.max(abs_err);
        if abs_err > spec.tol_abs.max(spec.tol_rel * scale) {
            pass = false;
        }
    }
    Ok(GradCheckReport {
        max_rel_err: max_rel,
        max_abs_err: max_abs,
        worst_index: worst,
        pass,
    })
}
