//! Single-point calibration of the linearized flux scale, and the legacy
//! least-squares fit used for comparison.

use serde::{Deserialize, Serialize};

use crate::bootstrap::BootstrapEnsemble;
use crate::design::{validate_observations, Observation, RunDesign};
use crate::error::{invalid, FluxcalError, Result};
use crate::estimator::objective::{logistic, logit};
use crate::estimator::{eval_monomial, expand_scaled, initial_params, FitResult, OptimizerConfig};
use crate::model::{compose_unchecked, expected_reading, Hyperparams};
use crate::optim::{maximize, NewtonSettings, Objective};
use crate::simulator::invert_response;

/// A flux whose expected reading is known exactly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationRef {
    pub phi_ref: f64,
    pub n_ref: f64,
}

impl CalibrationRef {
    pub fn validate(&self) -> Result<()> {
        if !(self.phi_ref > 0.0 && self.phi_ref.is_finite()) {
            return invalid("phi_ref must be positive and finite");
        }
        if !self.n_ref.is_finite() {
            return invalid("n_ref must be finite");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub reference: CalibrationRef,
    /// Linearized flux at the reference reading, base fit.
    pub phi_ref_hat: f64,
    pub rho_hat: f64,
    pub beta: Vec<f64>,
    pub phi_ref_replicates: Vec<f64>,
    pub rho_replicates: Vec<f64>,
    pub replicate_betas: Vec<Vec<f64>>,
    /// Mean readings at zero flux and at the brightest fitted run under the
    /// base fit.
    pub reading_range: (f64, f64),
}

fn linearized_at(beta: &[f64], n: f64, what: &str) -> Result<f64> {
    let v = eval_monomial(beta, n);
    if !(v > 0.0 && v.is_finite()) {
        return Err(FluxcalError::CalibrationDomain(format!(
            "{what}: linearized flux at the reference reading is {v}, not positive"
        )));
    }
    Ok(v)
}

/// Ratio of the reference flux to the linearized flux at the reference
/// reading, for the base fit and every replicate.
pub fn calibrate(fit: &FitResult, ensemble: &BootstrapEnsemble, reference: CalibrationRef) -> Result<CalibrationResult> {
    reference.validate()?;
    let brightest = fit.fitted_fluxes.iter().cloned().fold(f64::NAN, f64::max);
    let brightest = if brightest.is_finite() { brightest } else { fit.phi_max };
    let phi_ref_hat = linearized_at(&fit.beta, reference.n_ref, "base fit")?;
    let mut phi_ref_replicates = Vec::with_capacity(ensemble.replicates.len());
    for (b, rep) in ensemble.replicates.iter().enumerate() {
        if rep.beta.len() != fit.beta.len() {
            return invalid("replicate and base fits differ in polynomial degree");
        }
        phi_ref_replicates.push(linearized_at(&rep.beta, reference.n_ref, &format!("replicate {b}"))?);
    }
    Ok(CalibrationResult {
        reference,
        phi_ref_hat,
        rho_hat: reference.phi_ref / phi_ref_hat,
        beta: fit.beta.clone(),
        rho_replicates: phi_ref_replicates.iter().map(|p| reference.phi_ref / p).collect(),
        phi_ref_replicates,
        replicate_betas: ensemble.replicates.iter().map(|r| r.beta.clone()).collect(),
        reading_range: (fit.mean_reading(0.0), fit.mean_reading(brightest)),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibratedValue {
    pub n: f64,
    pub phi_cal: f64,
    pub replicates: Vec<f64>,
    /// The reading lies outside the range the fit covers.
    pub extrapolated: bool,
}

impl CalibratedValue {
    /// `phi* - phi_cal` per replicate.
    pub fn absolute_deviations(&self) -> Vec<f64> {
        self.replicates.iter().map(|r| r - self.phi_cal).collect()
    }

    /// `phi* / phi_cal - 1` per replicate.
    pub fn relative_deviations(&self) -> Vec<f64> {
        self.replicates.iter().map(|r| r / self.phi_cal - 1.0).collect()
    }
}

/// Calibrated flux at reading `n`. Computed as
/// `phi_ref * (h(n) / h(n_ref))`, so the reference reading maps to
/// `phi_ref` exactly for the base fit and every replicate.
pub fn apply_calibration(result: &CalibrationResult, n: f64) -> CalibratedValue {
    let phi_ref = result.reference.phi_ref;
    let phi_cal = phi_ref * (eval_monomial(&result.beta, n) / result.phi_ref_hat);
    let replicates = result
        .replicate_betas
        .iter()
        .zip(&result.phi_ref_replicates)
        .map(|(beta, href)| phi_ref * (eval_monomial(beta, n) / href))
        .collect();
    let (lo, hi) = result.reading_range;
    CalibratedValue {
        n,
        phi_cal,
        replicates,
        extrapolated: n < lo.min(hi) || n > lo.max(hi),
    }
}

/// Result of the legacy least-squares fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LegacyFit {
    /// Monomial coefficients of the linearization.
    pub beta: Vec<f64>,
    pub phi: Vec<f64>,
    pub psi: Vec<f64>,
    /// Composed flux per observation.
    pub fitted_fluxes: Vec<f64>,
    /// Achieved value of the least-squares objective.
    pub objective: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// Negated legacy objective over `[ln phi.., logit psi.., b..]`, where `b`
/// are coefficients in the centred and scaled reading.
struct LegacyObjective<'a> {
    observations: &'a [Observation],
    design: &'a RunDesign,
    phi_max: f64,
    n_phi: usize,
    n_psi: usize,
    n_b: usize,
    scaled: Vec<f64>,
}

impl LegacyObjective<'_> {
    fn split<'t>(&self, theta: &'t [f64]) -> (Vec<f64>, Vec<f64>, &'t [f64]) {
        let phi = theta[..self.n_phi].iter().map(|t| t.exp()).collect();
        let psi = theta[self.n_phi..self.n_phi + self.n_psi].iter().map(|&t| logistic(t)).collect();
        (phi, psi, &theta[self.n_phi + self.n_psi..])
    }

    fn evaluate(&self, theta: &[f64], grad: Option<&mut [f64]>) -> f64 {
        let (phi, psi, b) = self.split(theta);
        let fluxes: Vec<f64> = self
            .observations
            .iter()
            .map(|o| compose_unchecked(&self.design.rows[o.run_index], &phi, &psi))
            .collect();
        let (arg, max) = fluxes
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, &f)| if f > acc.1 { (i, f) } else { acc });
        let gap = self.phi_max - max;
        let mut loss = gap * gap;

        // dL/dPhi_i per observation
        let mut d_flux = vec![0.0; fluxes.len()];
        let mut g_b = vec![0.0; self.n_b];
        for (i, &v) in self.scaled.iter().enumerate() {
            let mut pow = 1.0;
            let mut h = 0.0;
            for bk in b {
                h += bk * pow;
                pow *= v;
            }
            let e = h - fluxes[i];
            loss += e * e;
            d_flux[i] = -2.0 * e;
            let mut pow = 1.0;
            for gk in g_b.iter_mut() {
                *gk += 2.0 * e * pow;
                pow *= v;
            }
        }
        d_flux[arg] -= 2.0 * gap;

        if let Some(grad) = grad {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let last = self.n_phi - 1;
            for (o, &df) in self.observations.iter().zip(&d_flux) {
                let row = &self.design.rows[o.run_index];
                for &j in &row.on {
                    grad[j] += df * phi[j];
                }
                if let Some(k) = row.aperture {
                    grad[last] += df * psi[k] * phi[last];
                    grad[self.n_phi + k] += df * phi[last] * psi[k] * (1.0 - psi[k]);
                }
            }
            for (k, gk) in g_b.iter().enumerate() {
                grad[self.n_phi + self.n_psi + k] = *gk;
            }
            // maximizing the negated loss
            grad.iter_mut().for_each(|g| *g = -*g);
        }
        -loss
    }
}

impl Objective for LegacyObjective<'_> {
    fn dim(&self) -> usize {
        self.n_phi + self.n_psi + self.n_b
    }

    fn value(&self, x: &[f64]) -> f64 {
        self.evaluate(x, None)
    }

    fn value_and_gradient(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        self.evaluate(x, Some(grad))
    }
}

/// Least-squares fit of the linearization polynomial and lamp fluxes,
/// minimizing `(phi_max - max_i Phi_i)^2 + sum_i (h(n_i) - Phi_i)^2`.
///
/// There is no noise model and no penalty. The max term is differentiated
/// through the run that currently attains the maximum.
pub fn legacy_ls_fit(
    observations: &[Observation],
    design: &RunDesign,
    hyper: &Hyperparams,
    opt: &OptimizerConfig,
) -> Result<LegacyFit> {
    hyper.validate()?;
    opt.validate()?;
    design.validate()?;
    validate_observations(observations, design)?;
    let n_b = hyper.degree + 1;
    let needed = design.n_fluxes() + design.n_apertures() + n_b;
    if observations.len() < needed {
        return Err(FluxcalError::UnderDetermined {
            observations: observations.len(),
            parameters: needed,
        });
    }

    let lo = observations.iter().map(|o| o.n).fold(f64::INFINITY, f64::min);
    let hi = observations.iter().map(|o| o.n).fold(f64::NEG_INFINITY, f64::max);
    let centre = 0.5 * (lo + hi);
    let half = 0.5 * (hi - lo);
    if !(half > 0.0) {
        return Err(FluxcalError::SingularFit("all readings are equal".into()));
    }

    let start = initial_params(observations, design, hyper);
    let phi_max = hyper.phi_max;
    // the start's straight line n = a + g Phi, inverted
    let gain = 2.0 * start.alpha[1] / phi_max;
    let intercept = start.alpha[0] - start.alpha[1];
    let mut theta: Vec<f64> = start.phi.iter().map(|p| p.ln()).collect();
    theta.extend(start.psi.iter().map(|&p| logit(p)));
    let mut b = vec![0.0; n_b];
    b[0] = (centre - intercept) / gain;
    b[1] = half / gain;
    theta.extend(b);

    let objective = LegacyObjective {
        observations,
        design,
        phi_max,
        n_phi: design.n_fluxes(),
        n_psi: design.n_apertures(),
        n_b,
        scaled: observations.iter().map(|o| (o.n - centre) / half).collect(),
    };
    let settings = NewtonSettings {
        max_iterations: opt.max_iterations,
        gradient_tolerance: opt.gradient_tolerance,
    };
    let max = maximize(&objective, &theta, &settings)?;
    let (phi, psi, b) = objective.split(&max.x);
    let fitted_fluxes = observations
        .iter()
        .map(|o| compose_unchecked(&design.rows[o.run_index], &phi, &psi))
        .collect();
    Ok(LegacyFit {
        beta: expand_scaled(b, centre, half),
        phi,
        psi,
        fitted_fluxes,
        objective: -max.value,
        converged: max.converged,
        iterations: max.iterations,
    })
}

/// `points` evenly spaced fluxes on `[0, phi_max]`.
pub fn flux_grid(phi_max: f64, points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..points).map(|i| phi_max * i as f64 / (points - 1) as f64).collect(),
    }
}

/// Nonlinearity `E[n(Phi)] - Phi` of a likelihood fit.
pub fn fit_nonlinearity(fit: &FitResult, grid: &[f64]) -> Vec<f64> {
    grid.iter()
        .map(|&f| expected_reading(f, &fit.params.alpha, fit.phi_max) - f)
        .collect()
}

/// Nonlinearity `n(Phi) - Phi` of a legacy fit, inverting its polynomial.
pub fn legacy_nonlinearity(fit: &LegacyFit, grid: &[f64]) -> Result<Vec<f64>> {
    grid.iter().map(|&f| Ok(invert_response(f, &fit.beta)? - f)).collect()
}

/// Pointwise minimum and maximum over a set of curves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Envelope {
    pub fn of(curves: &[Vec<f64>]) -> Result<Self> {
        let Some(first) = curves.first() else {
            return invalid("no curves to envelope");
        };
        let mut lower = first.clone();
        let mut upper = first.clone();
        for c in &curves[1..] {
            if c.len() != lower.len() {
                return invalid("curves differ in length");
            }
            for (i, &v) in c.iter().enumerate() {
                lower[i] = lower[i].min(v);
                upper[i] = upper[i].max(v);
            }
        }
        Ok(Envelope { lower, upper })
    }

    /// Indices where `curve` leaves the envelope.
    pub fn excursions(&self, curve: &[f64]) -> Vec<usize> {
        curve
            .iter()
            .enumerate()
            .filter(|(i, &v)| v < self.lower[*i] || v > self.upper[*i])
            .map(|(i, _)| i)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelParams;

    fn fit_with_beta(beta: Vec<f64>) -> FitResult {
        FitResult {
            params: ModelParams {
                phi: vec![0.5, 0.5],
                psi: vec![],
                alpha: vec![0.5, 0.5],
                gamma: 1.0,
                sigma: 1.0,
            },
            beta,
            fitted_fluxes: vec![],
            loglik: 0.0,
            converged: true,
            iterations: 0,
            gradient_norm: 0.0,
            phi_max: 1.0,
        }
    }

    fn ensemble(betas: &[Vec<f64>]) -> BootstrapEnsemble {
        BootstrapEnsemble {
            requested: betas.len(),
            replicates: betas.iter().map(|b| fit_with_beta(b.clone())).collect(),
            seeds: (0..betas.len() as u64).collect(),
            failures: 0,
            failed_seeds: vec![],
        }
    }

    const REF: CalibrationRef = CalibrationRef {
        phi_ref: 0.5,
        n_ref: 0.5,
    };

    #[test]
    fn identity_ratio_is_one() {
        let r = calibrate(&fit_with_beta(vec![0.0, 1.0, 0.0]), &ensemble(&[]), REF).unwrap();
        assert_eq!(r.rho_hat, 1.0);
    }

    #[test]
    fn doubled_gain_halves_ratio() {
        let r = calibrate(&fit_with_beta(vec![0.0, 2.0, 0.0]), &ensemble(&[]), REF).unwrap();
        assert_eq!(r.rho_hat, 0.5);
    }

    #[test]
    fn reference_reading_is_pinned() {
        let betas = vec![
            vec![0.013, 0.97, 0.021, -0.0077],
            vec![-0.002, 1.01, 0.019, -0.0081],
            vec![0.0071, 0.993, 0.0233, -0.0069],
        ];
        let base = fit_with_beta(vec![0.0031, 0.9987, 0.0221, -0.0079]);
        for reference in [REF, CalibrationRef { phi_ref: 0.37, n_ref: 0.41 }, CalibrationRef { phi_ref: 1e3, n_ref: 0.9 }] {
            let r = calibrate(&base, &ensemble(&betas), reference).unwrap();
            let v = apply_calibration(&r, reference.n_ref);
            assert_eq!(v.phi_cal, reference.phi_ref);
            assert!(v.replicates.iter().all(|&x| x == reference.phi_ref));
        }
    }

    #[test]
    fn scale_equivariance() {
        let base = fit_with_beta(vec![0.0031, 0.9987, 0.0221, -0.0079]);
        let ens = ensemble(&[vec![0.002, 1.001, 0.02, -0.008]]);
        let r1 = calibrate(&base, &ens, REF).unwrap();
        // powers of two scale without rounding; other factors to one ulp or so
        for (c, rel) in [(2.0, 0.0), (0.125, 0.0), (3.7, 4.0 * f64::EPSILON)] {
            let r2 = calibrate(&base, &ens, CalibrationRef { phi_ref: c * 0.5, n_ref: 0.5 }).unwrap();
            for i in 0..=20 {
                let n = i as f64 / 20.0;
                let (a, b) = (apply_calibration(&r1, n), apply_calibration(&r2, n));
                assert!((c * a.phi_cal - b.phi_cal).abs() <= rel * b.phi_cal.abs());
                assert!((c * a.replicates[0] - b.replicates[0]).abs() <= rel * b.replicates[0].abs());
            }
        }
    }

    #[test]
    fn degenerate_ensemble_has_no_spread() {
        let b = vec![0.0, 1.0, 0.0];
        let r = calibrate(&fit_with_beta(b.clone()), &ensemble(&[b.clone(), b.clone()]), REF).unwrap();
        for i in 0..=10 {
            let v = apply_calibration(&r, i as f64 / 10.0);
            assert!(v.replicates.iter().all(|&x| x == v.phi_cal));
        }
    }

    #[test]
    fn non_positive_reference_flux_is_a_domain_error() {
        let r = calibrate(&fit_with_beta(vec![-1.0, 1.0]), &ensemble(&[]), REF);
        assert!(matches!(r, Err(FluxcalError::CalibrationDomain(_))));
        assert!(calibrate(&fit_with_beta(vec![0.0, 1.0]), &ensemble(&[]), CalibrationRef { phi_ref: 0.0, n_ref: 0.5 }).is_err());
    }

    #[test]
    fn extrapolation_flag() {
        let r = calibrate(&fit_with_beta(vec![0.0, 1.0]), &ensemble(&[]), REF).unwrap();
        assert!(!apply_calibration(&r, 0.5).extrapolated);
        assert!(apply_calibration(&r, 1.2).extrapolated);
    }

    #[test]
    fn envelope_excursions() {
        let env = Envelope::of(&[vec![0.0, 1.0, 2.0], vec![1.0, 0.0, 3.0]]).unwrap();
        assert_eq!(env.lower, vec![0.0, 0.0, 2.0]);
        assert_eq!(env.excursions(&[0.5, 0.5, 3.5]), vec![2]);
        assert!(Envelope::of(&[]).is_err());
    }

    #[test]
    fn grid_endpoints() {
        let g = flux_grid(2.0, 101);
        assert_eq!(g.len(), 101);
        assert_eq!(g[0], 0.0);
        assert_eq!(g[100], 2.0);
    }
}
