use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, FluxcalError, Result};
use crate::legendre::scale_from_unit;
use crate::model::expected_reading;

/// Grid size used when a fit derives its linearization coefficients.
pub const DEFAULT_BETA_GRID: usize = 1001;

/// `sum_m beta_m n^m` by Horner's rule.
pub fn eval_monomial(beta: &[f64], n: f64) -> f64 {
    beta.iter().rev().fold(0.0, |acc, b| acc * n + b)
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Monomial coefficients of the linearization function.
///
/// Builds `grid_size` evenly spaced points on `[-1, 1]` (the centres of equal
/// cells, so refining the grid converges quadratically), maps them to fluxes,
/// evaluates the mean reading at each, and regresses flux on powers of the
/// mean reading by ordinary least squares. The readings are centred and
/// scaled onto `[-1, 1]` before the powers are formed, and the solution is
/// expanded back into powers of the raw reading.
pub fn derive_beta(alpha: &[f64], phi_max: f64, grid_size: usize) -> Result<Vec<f64>> {
    if alpha.len() < 2 {
        return invalid("at least two Legendre coefficients are required");
    }
    let p = alpha.len() - 1;
    if grid_size < 10 * (p + 1) {
        return invalid(format!("grid of {grid_size} points is too coarse for degree {p}"));
    }
    if !(phi_max > 0.0) {
        return invalid("phi_max must be positive");
    }

    let fluxes: Vec<f64> = (0..grid_size)
        .map(|l| scale_from_unit(-1.0 + (2 * l + 1) as f64 / grid_size as f64, phi_max))
        .collect();
    let readings: Vec<f64> = fluxes.iter().map(|&f| expected_reading(f, alpha, phi_max)).collect();
    if readings.iter().any(|r| !r.is_finite()) {
        return invalid("non-finite mean reading on the grid");
    }

    let lo = readings.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = readings.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let centre = 0.5 * (hi + lo);
    let half = 0.5 * (hi - lo);
    if !(half > 1e-12 * centre.abs().max(f64::MIN_POSITIVE)) {
        return Err(FluxcalError::SingularFit(
            "mean reading is constant over the flux range".into(),
        ));
    }

    let mut design = DMatrix::zeros(grid_size, p + 1);
    for (l, &r) in readings.iter().enumerate() {
        let v = (r - centre) / half;
        let mut pow = 1.0;
        for m in 0..=p {
            design[(l, m)] = pow;
            pow *= v;
        }
    }
    let target = DVector::from_column_slice(&fluxes);
    let qr = design.qr();
    let r = qr.r();
    let diag: Vec<f64> = (0..=p).map(|k| r[(k, k)].abs()).collect();
    let dmax = diag.iter().cloned().fold(0.0, f64::max);
    if diag.iter().any(|&d| !(d > 1e-12 * dmax)) {
        return Err(FluxcalError::SingularFit("rank-deficient monomial design".into()));
    }
    let qtb = qr.q().transpose() * target;
    let scaled = r
        .solve_upper_triangular(&qtb)
        .ok_or_else(|| FluxcalError::SingularFit("triangular solve failed".into()))?;

    Ok(expand_scaled(scaled.as_slice(), centre, half))
}

/// Rewrites `sum_k b_k ((n - c) / h)^k` as `sum_m beta_m n^m`.
pub(crate) fn expand_scaled(scaled: &[f64], centre: f64, half: f64) -> Vec<f64> {
    let mut beta = vec![0.0; scaled.len()];
    for (k, bk) in scaled.iter().enumerate() {
        let coef = bk / half.powi(k as i32);
        for (m, beta_m) in beta.iter_mut().enumerate().take(k + 1) {
            *beta_m += coef * binomial(k, m) * (-centre).powi((k - m) as i32);
        }
    }
    beta
}
