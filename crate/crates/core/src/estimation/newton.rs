//! Safeguarded Newton-Raphson ascent.

use nalgebra::{DMatrix, DVector};

use super::derivatives::{check_finite, Objective};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub struct NewtonConfig {
    pub max_iter: usize,
    pub grad_tol: f64,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        NewtonConfig {
            max_iter: 50,
            grad_tol: 1e-8,
        }
    }
}

#[derive(Clone, Debug)]
pub struct NewtonResult {
    pub point: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
    /// The line search could not improve on the returned point.
    pub stalled: bool,
}

const MAX_HALVINGS: usize = 30;
const INITIAL_SHIFT: f64 = 1e-6;
const MAX_SHIFT_DOUBLINGS: usize = 400;
const REL_CHANGE_TOL: f64 = 1e-14;

/// Solves `(−H + τI) d = g`, raising τ from 0, then from 1e-6 by doubling,
/// until the shifted matrix is positive definite.
fn ascent_direction(grad: &[f64], hess: &[f64]) -> Option<Vec<f64>> {
    let d = grad.len();
    let neg_h = DMatrix::from_row_slice(d, d, hess).map(|v| -v);
    let neg_h = (&neg_h + neg_h.transpose()) * 0.5;
    let g = DVector::from_column_slice(grad);
    let mut tau = 0.0;
    for _ in 0..MAX_SHIFT_DOUBLINGS {
        let shifted = &neg_h + DMatrix::identity(d, d) * tau;
        if let Some(chol) = shifted.cholesky() {
            let step = chol.solve(&g);
            if step.iter().all(|v| v.is_finite()) {
                return Some(step.iter().copied().collect());
            }
        }
        tau = if tau == 0.0 { INITIAL_SHIFT } else { tau * 2.0 };
    }
    None
}

/// Maximizes `obj` from `start`. The returned value is never below the
/// starting value.
pub fn newton_maximize(obj: &dyn Objective, start: &[f64], cfg: NewtonConfig) -> Result<NewtonResult> {
    let mut u = start.to_vec();
    let mut f = obj.value(&u);
    if !f.is_finite() {
        return Err(Error::Numerical("objective is not finite at the starting point".into()));
    }
    let mut converged = false;
    let mut stalled = false;
    let mut iterations = 0;
    while iterations < cfg.max_iter {
        let ev = obj.evaluate(&u);
        if check_finite(&ev, "M-step").is_err() {
            stalled = true;
            break;
        }
        let gmax = ev.grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        if gmax < cfg.grad_tol {
            converged = true;
            break;
        }
        let Some(dir) = ascent_direction(&ev.grad, &ev.hess) else {
            stalled = true;
            break;
        };
        iterations += 1;
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let cand: Vec<f64> = u.iter().zip(&dir).map(|(x, d)| x + step * d).collect();
            let fc = obj.value(&cand);
            if fc.is_finite() && fc >= f {
                accepted = Some((cand, fc));
                break;
            }
            step *= 0.5;
        }
        let Some((cand, fc)) = accepted else {
            stalled = true;
            break;
        };
        let change = fc - f;
        u = cand;
        f = fc;
        if change <= REL_CHANGE_TOL * f.abs().max(1.0) {
            converged = true;
            break;
        }
    }
    Ok(NewtonResult {
        point: u,
        value: f,
        iterations,
        converged,
        stalled,
    })
}
