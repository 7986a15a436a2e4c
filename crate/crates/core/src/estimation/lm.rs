//! Damped Gauss-Newton (Levenberg-Marquardt) least squares.

use crate::error::{GstError, Result};
use crate::linalg::{Mat, Vector};

#[derive(Clone, Debug)]
pub struct LsqOptions {
    pub max_iters: usize,
    /// Stop when an accepted step lowers the objective by less than this fraction.
    pub rel_tol: f64,
    pub grad_tol: f64,
    pub initial_damping: f64,
}

impl Default for LsqOptions {
    fn default() -> Self {
        LsqOptions {
            max_iters: 500,
            rel_tol: 1e-10,
            grad_tol: 1e-8,
            initial_damping: 1e-3,
        }
    }
}

#[derive(Clone, Debug)]
pub struct LsqResult {
    pub theta: Vector,
    pub objective: f64,
    /// Objective after each accepted step, starting with the initial value.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub message: String,
}

/// Minimizes `|r(theta)|^2` with a closure returning residuals and, when
/// asked, their Jacobian.
pub fn least_squares<F>(mut f: F, theta0: &Vector, opts: &LsqOptions) -> Result<LsqResult>
where
    F: FnMut(&Vector, bool) -> Result<(Vector, Option<Mat>)>,
{
    let (mut r, j) = f(theta0, true)?;
    let mut j = j.ok_or_else(|| GstError::Optimizer("Jacobian not returned".into()))?;
    let mut obj = r.norm_squared();
    if !obj.is_finite() {
        return Err(GstError::Optimizer("objective is not finite at the starting point".into()));
    }
    let mut theta = theta0.clone();
    let mut trace = vec![obj];
    let mut jtj = j.tr_mul(&j);
    let mut g = j.tr_mul(&r);
    let max_diag = (0..jtj.nrows()).map(|i| jtj[(i, i)]).fold(0.0, f64::max);
    let mut lambda = opts.initial_damping * max_diag.max(1e-12);
    let mut iterations = 0;
    let finish = |theta, obj, trace, iterations, converged, message: &str| LsqResult {
        theta,
        objective: obj,
        trace,
        iterations,
        converged,
        message: message.to_string(),
    };
    while iterations < opts.max_iters {
        if g.norm() < opts.grad_tol || obj == 0.0 {
            return Ok(finish(theta, obj, trace, iterations, true, "gradient below tolerance"));
        }
        iterations += 1;
        let n = jtj.nrows();
        let max_diag = (0..n).map(|i| jtj[(i, i)]).fold(0.0, f64::max);
        let mut a = jtj.clone();
        for i in 0..n {
            a[(i, i)] += lambda * jtj[(i, i)].max(1e-10 * max_diag).max(1e-300);
        }
        let step = match a.cholesky() {
            Some(ch) => -ch.solve(&g),
            None => {
                lambda *= 10.0;
                continue;
            }
        };
        // reduction predicted by the linearized model
        let predicted = -(2.0 * g.dot(&step) + step.dot(&(&jtj * &step)));
        if predicted <= opts.rel_tol * obj * 1e-2 {
            return Ok(finish(theta, obj, trace, iterations, true, "predicted reduction below tolerance"));
        }
        let trial = &theta + &step;
        let new_obj = match f(&trial, false) {
            Ok((rn, _)) => {
                let v = rn.norm_squared();
                if v.is_finite() { Some(v) } else { None }
            }
            Err(GstError::Optimizer(_)) => None,
            Err(e) => return Err(e),
        };
        match new_obj {
            Some(v) if v < obj => {
                let rel = (obj - v) / obj;
                theta = trial;
                let (rn, jn) = f(&theta, true)?;
                r = rn;
                j = jn.ok_or_else(|| GstError::Optimizer("Jacobian not returned".into()))?;
                obj = r.norm_squared();
                jtj = j.tr_mul(&j);
                g = j.tr_mul(&r);
                trace.push(obj);
                lambda = (lambda / 3.0).max(1e-15);
                if rel < opts.rel_tol {
                    return Ok(finish(theta, obj, trace, iterations, true, "relative change below tolerance"));
                }
            }
            _ => {
                lambda *= 4.0;
                if lambda > 1e20 {
                    return Ok(finish(theta, obj, trace, iterations, false, "damping overflow"));
                }
            }
        }
    }
    Ok(finish(theta, obj, trace, iterations, false, "maximum iterations reached"))
}

/// Same as [`least_squares`] with separate residual and Jacobian functions.
pub fn local_least_squares<R, J>(residual: R, jacobian: J, theta0: &Vector, opts: &LsqOptions) -> Result<LsqResult>
where
    R: Fn(&Vector) -> Result<Vector>,
    J: Fn(&Vector) -> Result<Mat>,
{
    least_squares(
        |t, want| {
            let r = residual(t)?;
            let j = if want { Some(jacobian(t)?) } else { None };
            Ok((r, j))
        },
        theta0,
        opts,
    )
}
