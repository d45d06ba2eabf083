//! Damped Newton maximizer for smooth unconstrained objectives.
//!
//! The Hessian is built by central differences of the analytic gradient.
//! When the negated Hessian is not positive definite a Marquardt shift is
//! added to its diagonal, and each step is backtracked until it satisfies an
//! Armijo condition. Newton steps are invariant to affine rescaling of the
//! coordinates, which matters here because the likelihood mixes curvatures
//! spanning many orders of magnitude.

use nalgebra::{DMatrix, DVector};

use crate::error::{FluxcalError, Result};

/// A scalar function to maximize, with an analytic gradient.
pub trait Objective {
    fn dim(&self) -> usize;

    /// Objective value. Non-finite values mark infeasible points.
    fn value(&self, x: &[f64]) -> f64;

    /// Writes the gradient into `grad` and returns the value.
    fn value_and_gradient(&self, x: &[f64], grad: &mut [f64]) -> f64;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonSettings {
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Maximum {
    pub x: Vec<f64>,
    pub value: f64,
    pub gradient_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

const ARMIJO: f64 = 1e-4;
const MIN_STEP: f64 = 1e-12;
const FLAT_ULPS: f64 = 16.0;
const MAX_DAMPING_ROUNDS: usize = 24;

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Step used for the difference quotient in coordinate `k`.
#[inline]
fn fd_step(x: f64) -> f64 {
    1e-6 * x.abs().max(1.0)
}

fn hessian<O: Objective + ?Sized>(obj: &O, x: &[f64]) -> DMatrix<f64> {
    let d = x.len();
    let mut h = DMatrix::zeros(d, d);
    let mut xp = x.to_vec();
    let mut gp = vec![0.0; d];
    let mut gm = vec![0.0; d];
    for k in 0..d {
        let step = fd_step(x[k]);
        xp[k] = x[k] + step;
        obj.value_and_gradient(&xp, &mut gp);
        xp[k] = x[k] - step;
        obj.value_and_gradient(&xp, &mut gm);
        xp[k] = x[k];
        for r in 0..d {
            h[(r, k)] = (gp[r] - gm[r]) / (2.0 * step);
        }
    }
    // symmetrize
    let ht = h.transpose();
    (h + ht) * 0.5
}

/// Maximizes `obj` starting from `start`.
///
/// Returns the best point found. `converged` reports whether the Euclidean
/// gradient norm fell below the tolerance, or the Newton decrement
/// `g' H^-1 g` fell below the rounding level of the objective. The second
/// case arises when the curvature is so large that one ulp of movement in
/// `x` changes the gradient by more than the tolerance. Fails only when the
/// objective is not finite at the start.
pub fn maximize<O: Objective + ?Sized>(
    obj: &O,
    start: &[f64],
    settings: &NewtonSettings,
) -> Result<Maximum> {
    let d = obj.dim();
    if start.len() != d {
        return Err(FluxcalError::Internal(format!(
            "start vector has {} entries, objective has {d}",
            start.len()
        )));
    }
    let mut x = start.to_vec();
    let mut grad = vec![0.0; d];
    let mut f = obj.value_and_gradient(&x, &mut grad);
    if !f.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(FluxcalError::OptimizationFailed(
            "objective is not finite at the starting point".into(),
        ));
    }

    let mut iterations = 0;
    let mut stalls = 0;
    let mut at_precision = false;
    let mut trial = vec![0.0; d];
    let mut trial_grad = vec![0.0; d];
    while iterations < settings.max_iterations {
        if norm(&grad) < settings.gradient_tolerance {
            break;
        }
        iterations += 1;

        let neg_h = -hessian(obj, &x);
        let g = DVector::from_column_slice(&grad);
        let diag_scale: Vec<f64> = {
            let max_diag = (0..d).map(|k| neg_h[(k, k)].abs()).fold(0.0, f64::max);
            let floor = (max_diag * 1e-12).max(f64::MIN_POSITIVE);
            (0..d).map(|k| neg_h[(k, k)].abs().max(floor)).collect()
        };

        let mut damping = 0.0;
        let mut accepted = false;
        let mut f_new = f;
        for _ in 0..MAX_DAMPING_ROUNDS {
            let mut m = neg_h.clone();
            for k in 0..d {
                m[(k, k)] += damping * diag_scale[k];
            }
            let Some(chol) = m.cholesky() else {
                damping = if damping == 0.0 { 1e-8 } else { damping * 10.0 };
                continue;
            };
            let step = chol.solve(&g);
            if step.iter().any(|s| !s.is_finite()) {
                damping = if damping == 0.0 { 1e-8 } else { damping * 10.0 };
                continue;
            }
            let slope = g.dot(&step);
            if damping == 0.0 && slope <= FLAT_ULPS * f64::EPSILON * f.abs() {
                // The full Newton step gains less than the rounding level of
                // f. Take it only while it still shrinks the gradient.
                for k in 0..d {
                    trial[k] = x[k] + step[k];
                }
                let ft = obj.value_and_gradient(&trial, &mut trial_grad);
                if ft.is_finite() && norm(&trial_grad) < 0.5 * norm(&grad) {
                    f_new = ft;
                    accepted = true;
                } else {
                    at_precision = true;
                }
                break;
            }
            let mut t = 1.0;
            while t > MIN_STEP {
                for k in 0..d {
                    trial[k] = x[k] + t * step[k];
                }
                let ft = obj.value(&trial);
                // Near the optimum the predicted gain drops below the rounding
                // level of f; a full step is then judged by the gradient.
                let flat = t == 1.0 && ft.is_finite() && (ft - f).abs() <= FLAT_ULPS * f64::EPSILON * f.abs();
                if ft.is_finite() && (ft >= f + ARMIJO * t * slope || flat) {
                    let ft = obj.value_and_gradient(&trial, &mut trial_grad);
                    let finite = ft.is_finite() && trial_grad.iter().all(|v| v.is_finite());
                    if finite && (!flat || ft >= f + ARMIJO * t * slope || norm(&trial_grad) < 0.5 * norm(&grad)) {
                        f_new = ft;
                        accepted = true;
                        break;
                    }
                }
                t *= 0.5;
            }
            if accepted {
                break;
            }
            damping = if damping == 0.0 { 1e-4 } else { damping * 10.0 };
        }

        if at_precision {
            break;
        }
        if !accepted {
            // no ascent direction left at this precision
            break;
        }
        let improvement = f_new - f;
        let shrunk = norm(&trial_grad) < 0.5 * norm(&grad);
        std::mem::swap(&mut x, &mut trial);
        std::mem::swap(&mut grad, &mut trial_grad);
        f = f_new;
        if improvement <= f64::EPSILON * f.abs() && !shrunk {
            stalls += 1;
            if stalls >= 2 {
                // stalled at rounding level
                break;
            }
        } else {
            stalls = 0;
        }
    }

    let gradient_norm = norm(&grad);
    Ok(Maximum {
        x,
        value: f,
        gradient_norm,
        iterations,
        converged: gradient_norm < settings.gradient_tolerance || at_precision,
    })
}

/// `inner` with coordinate `index` held at `value`.
pub(crate) struct Pinned<'o, O: ?Sized> {
    pub inner: &'o O,
    pub index: usize,
    pub value: f64,
}

impl<O: Objective + ?Sized> Pinned<'_, O> {
    pub fn expand(&self, x: &[f64]) -> Vec<f64> {
        let mut full = Vec::with_capacity(x.len() + 1);
        full.extend_from_slice(&x[..self.index]);
        full.push(self.value);
        full.extend_from_slice(&x[self.index..]);
        full
    }

    pub fn reduce(&self, full: &[f64]) -> Vec<f64> {
        let mut x = full.to_vec();
        x.remove(self.index);
        x
    }
}

impl<O: Objective + ?Sized> Objective for Pinned<'_, O> {
    fn dim(&self) -> usize {
        self.inner.dim() - 1
    }

    fn value(&self, x: &[f64]) -> f64 {
        self.inner.value(&self.expand(x))
    }

    fn value_and_gradient(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let mut full_grad = vec![0.0; self.inner.dim()];
        let f = self.inner.value_and_gradient(&self.expand(x), &mut full_grad);
        full_grad.remove(self.index);
        grad.copy_from_slice(&full_grad);
        f
    }
}
