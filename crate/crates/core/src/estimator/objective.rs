//! The penalized log-likelihood in unconstrained coordinates.
//!
//! Packing: `[ln phi_j.., logit psi_k.., alpha_0..alpha_p, ln gamma, ln sigma]`.

use crate::design::{Observation, RunDesign};
use crate::legendre::legendre_series_with_derivative;
use crate::model::{compose_unchecked, Hyperparams, ModelParams, NoiseModel, MAX_DEGREE};
use crate::optim::Objective;

#[inline]
pub(crate) fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub(crate) fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Index layout of the packed vector.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Packing {
    pub n_phi: usize,
    pub n_psi: usize,
    pub n_alpha: usize,
}

impl Packing {
    pub fn new(design: &RunDesign, degree: usize) -> Self {
        Packing {
            n_phi: design.n_fluxes(),
            n_psi: design.n_apertures(),
            n_alpha: degree + 1,
        }
    }

    pub fn dim(&self) -> usize {
        self.n_phi + self.n_psi + self.n_alpha + 2
    }

    fn psi_at(&self) -> usize {
        self.n_phi
    }

    fn alpha_at(&self) -> usize {
        self.n_phi + self.n_psi
    }

    pub fn gamma_at(&self) -> usize {
        self.alpha_at() + self.n_alpha
    }

    pub fn pack(&self, params: &ModelParams) -> Vec<f64> {
        let mut theta = Vec::with_capacity(self.dim());
        theta.extend(params.phi.iter().map(|p| p.ln()));
        theta.extend(params.psi.iter().map(|&p| logit(p)));
        theta.extend_from_slice(&params.alpha);
        theta.push(params.gamma.ln());
        theta.push(params.sigma.ln());
        theta
    }

    pub fn unpack(&self, theta: &[f64]) -> ModelParams {
        let (a, g) = (self.alpha_at(), self.gamma_at());
        ModelParams {
            phi: theta[..self.n_phi].iter().map(|t| t.exp()).collect(),
            psi: theta[self.psi_at()..a].iter().map(|&t| logistic(t)).collect(),
            alpha: theta[a..g].to_vec(),
            gamma: theta[g].exp(),
            sigma: theta[g + 1].exp(),
        }
    }
}

pub(crate) struct LikelihoodObjective<'a> {
    observations: &'a [Observation],
    design: &'a RunDesign,
    hyper: &'a Hyperparams,
    packing: Packing,
}

impl<'a> LikelihoodObjective<'a> {
    pub fn new(observations: &'a [Observation], design: &'a RunDesign, hyper: &'a Hyperparams) -> Self {
        LikelihoodObjective {
            observations,
            design,
            hyper,
            packing: Packing::new(design, hyper.degree),
        }
    }

    pub fn packing(&self) -> Packing {
        self.packing
    }

    pub fn phi_max(&self) -> f64 {
        self.hyper.phi_max
    }

    fn evaluate(&self, theta: &[f64], grad: Option<&mut [f64]>) -> f64 {
        let pk = self.packing;
        let params = pk.unpack(theta);
        let hyper = self.hyper;
        let phi_max = hyper.phi_max;
        let (gamma, sigma) = (params.gamma, params.sigma);
        let n_alpha = pk.n_alpha;
        let want_grad = grad.is_some();

        let mut g_phi = vec![0.0; pk.n_phi];
        let mut g_psi = vec![0.0; pk.n_psi];
        let mut g_alpha = vec![0.0; n_alpha];
        let mut g_log_sigma = 0.0;

        let mut basis = [0.0; MAX_DEGREE + 1];
        let mut dbasis = [0.0; MAX_DEGREE + 1];
        let basis = &mut basis[..n_alpha];
        let dbasis = &mut dbasis[..n_alpha];
        let knee = hyper.kappa0 * phi_max;
        let last = pk.n_phi.wrapping_sub(1);

        let mut ll = 0.0;
        for obs in self.observations {
            let row = &self.design.rows[obs.run_index];
            let flux = compose_unchecked(row, &params.phi, &params.psi);
            let u = 2.0 * flux / phi_max - 1.0;
            legendre_series_with_derivative(u, basis, dbasis);
            let mut mean = 0.0;
            let mut slope = 0.0;
            for m in 0..n_alpha {
                mean += params.alpha[m] * basis[m];
                slope += params.alpha[m] * dbasis[m];
            }
            slope *= 2.0 / phi_max;

            let (sd, dsd) = match hyper.noise_model {
                NoiseModel::Constant => (sigma, 0.0),
                NoiseModel::PiecewiseProportional => {
                    if flux > knee {
                        (sigma * flux, sigma)
                    } else {
                        (sigma * knee, 0.0)
                    }
                }
            };
            let z = (obs.n - mean) / sd;
            ll -= 0.5 * z * z + sd.ln();

            if want_grad {
                let d_flux = z / sd * slope + (z * z - 1.0) / sd * dsd;
                for m in 0..n_alpha {
                    g_alpha[m] += z / sd * basis[m];
                }
                g_log_sigma += z * z - 1.0;
                for &j in &row.on {
                    g_phi[j] += d_flux;
                }
                if let Some(k) = row.aperture {
                    g_psi[k] += d_flux * params.phi[last];
                    g_phi[last] += d_flux * params.psi[k];
                }
            }
        }

        let total: f64 = params.phi.iter().sum();
        let scale_dev = (total - phi_max) / hyper.tau;
        ll -= 0.5 * scale_dev * scale_dev;

        let p = hyper.degree as f64;
        let linear_dev = params.alpha[1] - phi_max / 2.0;
        let q = linear_dev * linear_dev + params.alpha[2..].iter().map(|a| a * a).sum::<f64>();
        let inv_g2 = 1.0 / (gamma * gamma);
        ll -= 0.5 * q * inv_g2 + p * gamma.ln() + hyper.lambda_rate * gamma;

        if let Some(grad) = grad {
            let d_total = -scale_dev / hyper.tau;
            g_alpha[1] -= linear_dev * inv_g2;
            for m in 2..n_alpha {
                g_alpha[m] -= params.alpha[m] * inv_g2;
            }
            let mut i = 0;
            for (j, g) in g_phi.iter().enumerate() {
                grad[i] = params.phi[j] * (g + d_total);
                i += 1;
            }
            for (k, g) in g_psi.iter().enumerate() {
                let psi = params.psi[k];
                grad[i] = psi * (1.0 - psi) * g;
                i += 1;
            }
            grad[i..i + n_alpha].copy_from_slice(&g_alpha);
            i += n_alpha;
            grad[i] = q * inv_g2 - p - hyper.lambda_rate * gamma;
            grad[i + 1] = g_log_sigma;
        }
        ll
    }
}

impl Objective for LikelihoodObjective<'_> {
    fn dim(&self) -> usize {
        self.packing.dim()
    }

    fn value(&self, x: &[f64]) -> f64 {
        self.evaluate(x, None)
    }

    fn value_and_gradient(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        self.evaluate(x, Some(grad))
    }
}
