//! Parameters, flux composition and the penalized log-likelihood.
//!
//! Readings follow
//!
//! ```text
//! n_i ~ Normal(alpha_0 + sum_m alpha_m P_m(s(Phi_i)), sigma_i^2)
//! sum_j phi_j ~ Normal(phi_max, tau^2)
//! alpha_1 ~ Normal(phi_max / 2, gamma^2),  alpha_m ~ Normal(0, gamma^2) for m > 1
//! gamma ~ Exponential(lambda)
//! ```
//!
//! with `s` the affine map of `[0, phi_max]` onto `[-1, 1]`.

use serde::{Deserialize, Serialize};

use crate::design::{DesignRow, Observation, RunDesign};
use crate::error::{invalid, Result};
use crate::legendre::{legendre_series, scale_to_unit};

/// Maximum polynomial degree accepted anywhere in the crate.
pub const MAX_DEGREE: usize = 30;

/// Electronic-noise model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseModel {
    /// `sigma_i = sigma` for every run.
    Constant,
    /// `sigma_i = sigma * Phi_i` above the knee `kappa0 * phi_max`,
    /// `sigma * kappa0 * phi_max` below it.
    PiecewiseProportional,
}

/// Fixed inputs to the likelihood.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    /// Overall flux scale.
    pub phi_max: f64,
    /// Standard deviation of the knowledge of `phi_max`.
    pub tau: f64,
    /// Rate of the exponential penalty on `gamma`.
    pub lambda_rate: f64,
    /// Polynomial degree `p`.
    pub degree: usize,
    /// Noise knee, used by [`NoiseModel::PiecewiseProportional`].
    pub kappa0: f64,
    pub noise_model: NoiseModel,
}

impl Hyperparams {
    /// Defaults: `tau = 1e-3 phi_max`, prior mean of `gamma` equal to
    /// `phi_max`, cubic response, constant noise.
    pub fn new(phi_max: f64) -> Self {
        Hyperparams {
            phi_max,
            tau: 1e-3 * phi_max,
            lambda_rate: 1.0 / phi_max,
            degree: 3,
            kappa0: 0.2,
            noise_model: NoiseModel::Constant,
        }
    }

    /// Sets the exponential rate from the prior mean of `gamma`.
    pub fn with_gamma_prior_mean(mut self, mean: f64) -> Self {
        self.lambda_rate = 1.0 / mean;
        self
    }

    pub fn with_degree(mut self, degree: usize) -> Self {
        self.degree = degree;
        self
    }

    pub fn with_tau(mut self, tau: f64) -> Self {
        self.tau = tau;
        self
    }

    pub fn with_noise(mut self, noise_model: NoiseModel, kappa0: f64) -> Self {
        self.noise_model = noise_model;
        self.kappa0 = kappa0;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.phi_max > 0.0 && self.phi_max.is_finite()) {
            return invalid(format!("phi_max must be positive, got {}", self.phi_max));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return invalid(format!("tau must be positive, got {}", self.tau));
        }
        if !(self.lambda_rate > 0.0 && self.lambda_rate.is_finite()) {
            return invalid(format!("lambda_rate must be positive, got {}", self.lambda_rate));
        }
        if self.degree < 1 || self.degree > MAX_DEGREE {
            return invalid(format!("degree must be in 1..={MAX_DEGREE}, got {}", self.degree));
        }
        if !(self.kappa0 > 0.0 && self.kappa0 <= 1.0) {
            return invalid(format!("kappa0 must be in (0, 1], got {}", self.kappa0));
        }
        Ok(())
    }
}

/// The unknowns of the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Lamp fluxes (sphere) or beam-1 then beam-2 setting fluxes (conjoiner).
    pub phi: Vec<f64>,
    /// Variable-aperture fractions of lamp `J`.
    pub psi: Vec<f64>,
    /// Legendre coefficients `alpha_0..alpha_p`.
    pub alpha: Vec<f64>,
    /// Shrinkage scale.
    pub gamma: f64,
    /// Noise scale.
    pub sigma: f64,
}

impl ModelParams {
    pub fn degree(&self) -> usize {
        self.alpha.len().saturating_sub(1)
    }

    pub fn check_against(&self, design: &RunDesign, hyper: &Hyperparams) -> Result<()> {
        if self.phi.len() != design.n_fluxes() {
            return invalid(format!(
                "{} fluxes supplied, design has {}",
                self.phi.len(),
                design.n_fluxes()
            ));
        }
        if self.psi.len() != design.n_apertures() {
            return invalid(format!(
                "{} aperture fractions supplied, design has {}",
                self.psi.len(),
                design.n_apertures()
            ));
        }
        if self.alpha.len() != hyper.degree + 1 {
            return invalid(format!(
                "{} Legendre coefficients supplied, degree {} needs {}",
                self.alpha.len(),
                hyper.degree,
                hyper.degree + 1
            ));
        }
        if !(self.sigma > 0.0) {
            return invalid(format!("sigma must be positive, got {}", self.sigma));
        }
        if !(self.gamma > 0.0) {
            return invalid(format!("gamma must be positive, got {}", self.gamma));
        }
        Ok(())
    }
}

/// Total flux of a run: `sum_j x_ij phi_j + sum_k x_iJk psi_k phi_J`.
pub fn compose_flux(row: &DesignRow, params: &ModelParams) -> Result<f64> {
    let n = params.phi.len();
    if row.on.iter().any(|&j| j >= n) {
        return invalid("design row references a flux beyond the parameter vector");
    }
    if let Some(k) = row.aperture {
        if k >= params.psi.len() || n == 0 {
            return invalid("design row references an aperture state beyond the parameter vector");
        }
    }
    Ok(compose_unchecked(row, &params.phi, &params.psi))
}

#[inline]
pub(crate) fn compose_unchecked(row: &DesignRow, phi: &[f64], psi: &[f64]) -> f64 {
    let mut total: f64 = row.on.iter().map(|&j| phi[j]).sum();
    if let Some(k) = row.aperture {
        total += psi[k] * phi[phi.len() - 1];
    }
    total
}

/// `alpha_0 + sum_m alpha_m P_m(s(phi))`.
pub fn expected_reading(phi: f64, alpha: &[f64], phi_max: f64) -> f64 {
    let u = scale_to_unit(phi, phi_max);
    let mut basis = [0.0; MAX_DEGREE + 1];
    let basis = &mut basis[..alpha.len().min(MAX_DEGREE + 1)];
    legendre_series(u, basis);
    alpha.iter().zip(basis.iter()).map(|(a, p)| a * p).sum()
}

/// Noise standard deviation for a run with total flux `phi`.
pub fn noise_sd(phi: f64, params: &ModelParams, hyper: &Hyperparams) -> f64 {
    noise_sd_raw(phi, params.sigma, hyper)
}

#[inline]
pub(crate) fn noise_sd_raw(phi: f64, sigma: f64, hyper: &Hyperparams) -> f64 {
    match hyper.noise_model {
        NoiseModel::Constant => sigma,
        NoiseModel::PiecewiseProportional => {
            let knee = hyper.kappa0 * hyper.phi_max;
            if phi > knee {
                sigma * phi
            } else {
                sigma * knee
            }
        }
    }
}

/// The penalized log-likelihood, up to additive constants.
pub fn penalized_loglik(
    observations: &[Observation],
    design: &RunDesign,
    params: &ModelParams,
    hyper: &Hyperparams,
) -> Result<f64> {
    hyper.validate()?;
    params.check_against(design, hyper)?;
    crate::design::validate_observations(observations, design)?;

    let phi_max = hyper.phi_max;
    let mut data_term = 0.0;
    for obs in observations {
        let flux = compose_unchecked(&design.rows[obs.run_index], &params.phi, &params.psi);
        let sd = noise_sd_raw(flux, params.sigma, hyper);
        let r = obs.n - expected_reading(flux, &params.alpha, phi_max);
        data_term -= 0.5 * (r / sd).powi(2) + sd.ln();
    }

    let total: f64 = params.phi.iter().sum();
    let scale_term = -0.5 * ((total - phi_max) / hyper.tau).powi(2);

    let gamma = params.gamma;
    let p = hyper.degree as f64;
    let linear_dev = params.alpha[1] - phi_max / 2.0;
    let higher: f64 = params.alpha[2..].iter().map(|a| a * a).sum();
    let shrink_term = -(linear_dev * linear_dev + higher) / (2.0 * gamma * gamma) - p * gamma.ln();

    Ok(data_term + scale_term + shrink_term - hyper.lambda_rate * gamma)
}
