//! Maximum-likelihood fitting, the linearization polynomial and degree
//! selection by cross-validation.

mod beta;
mod cv;
pub(crate) mod objective;

pub use beta::{derive_beta, eval_monomial, DEFAULT_BETA_GRID};
pub(crate) use beta::expand_scaled;
pub use cv::{cross_validate, CvResult, DegreeScore};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::design::{validate_observations, Layout, Observation, RunDesign};
use crate::error::{invalid, FluxcalError, Result};
use crate::linalg::lstsq_svd;
use crate::model::{compose_unchecked, expected_reading, Hyperparams, ModelParams};
use crate::optim::{maximize, Maximum, NewtonSettings, Pinned};
use crate::seed::{rng_for, streams};
use objective::LikelihoodObjective;

/// Settings for the likelihood maximizer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub max_iterations: usize,
    /// Euclidean norm of the gradient in unconstrained coordinates.
    pub gradient_tolerance: f64,
    /// Total number of starting points; the first is deterministic, the rest
    /// jitter the fluxes.
    pub restarts: usize,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            max_iterations: 200,
            gradient_tolerance: 1e-6,
            restarts: 2,
            seed: 0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return invalid("max_iterations must be positive");
        }
        if !(self.gradient_tolerance > 0.0) {
            return invalid("gradient_tolerance must be positive");
        }
        if self.restarts == 0 {
            return invalid("restarts must be at least 1");
        }
        Ok(())
    }

    fn newton(&self) -> NewtonSettings {
        NewtonSettings {
            max_iterations: self.max_iterations,
            gradient_tolerance: self.gradient_tolerance,
        }
    }
}

/// Maximum-likelihood estimates and derived quantities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: ModelParams,
    /// Monomial coefficients of the linearization `Phi = sum beta_m n^m`.
    pub beta: Vec<f64>,
    /// Composed flux for each observation, in observation order.
    pub fitted_fluxes: Vec<f64>,
    pub loglik: f64,
    pub converged: bool,
    pub iterations: usize,
    pub gradient_norm: f64,
    /// Flux scale the fit was computed under.
    pub phi_max: f64,
}

impl FitResult {
    /// Mean instrument reading at flux `phi`.
    pub fn mean_reading(&self, phi: f64) -> f64 {
        expected_reading(phi, &self.params.alpha, self.phi_max)
    }

    /// Linearized flux for reading `n`.
    pub fn linearize(&self, n: f64) -> f64 {
        eval_monomial(&self.beta, n)
    }

    /// True when the ascent ran into the `gamma -> 0` end of the penalty,
    /// where the likelihood grows without bound and no interior maximum
    /// was found.
    pub fn is_degenerate(&self) -> bool {
        self.params.gamma < DEGENERATE_GAMMA * self.phi_max
    }
}

/// Shrinkage scale, relative to `phi_max`, below which a fit is degenerate.
pub const DEGENERATE_GAMMA: f64 = 1e-8;

/// `J + N_v + (p + 1) + 2`.
pub fn free_parameter_count(design: &RunDesign, degree: usize) -> usize {
    design.n_fluxes() + design.n_apertures() + degree + 1 + 2
}

fn check_inputs(
    observations: &[Observation],
    design: &RunDesign,
    hyper: &Hyperparams,
    opt: &OptimizerConfig,
) -> Result<()> {
    hyper.validate()?;
    opt.validate()?;
    design.validate()?;
    validate_observations(observations, design)?;
    let needed = free_parameter_count(design, hyper.degree);
    if observations.len() < needed {
        return Err(FluxcalError::UnderDetermined {
            observations: observations.len(),
            parameters: needed,
        });
    }
    Ok(())
}

/// Starting point for the maximizer.
///
/// Fluxes come from a linear least-squares fit `n = a + sum_j c_j x_ij`
/// (aperture states as extra columns), rescaled so they sum to `phi_max`;
/// the Legendre coefficients describe that same straight line. When the
/// linear fit is unusable the fluxes fall back to an even split.
pub fn initial_params(observations: &[Observation], design: &RunDesign, hyper: &Hyperparams) -> ModelParams {
    let phi_max = hyper.phi_max;
    let n_phi = design.n_fluxes();
    let n_psi = design.n_apertures();
    let n_obs = observations.len();

    let even_phi: Vec<f64> = match design.layout {
        Layout::Sphere { lamps, .. } => vec![phi_max / lamps as f64; lamps],
        Layout::Conjoiner { beam1, beam2 } => {
            let mut v = vec![phi_max / (2.0 * beam1 as f64); beam1];
            v.extend(std::iter::repeat_n(phi_max / (2.0 * beam2 as f64), beam2));
            v
        }
    };
    let even_psi: Vec<f64> = (1..=n_psi).map(|k| k as f64 / (n_psi as f64 + 1.0)).collect();
    let mean_n = observations.iter().map(|o| o.n).sum::<f64>() / n_obs.max(1) as f64;

    let cols = 1 + n_phi + n_psi;
    let mut a = DMatrix::zeros(n_obs, cols);
    let mut b = DVector::zeros(n_obs);
    for (i, obs) in observations.iter().enumerate() {
        let row = &design.rows[obs.run_index];
        a[(i, 0)] = 1.0;
        for &j in &row.on {
            a[(i, 1 + j)] = 1.0;
        }
        if let Some(k) = row.aperture {
            a[(i, 1 + n_phi + k)] = 1.0;
        }
        b[i] = obs.n;
    }

    let linear = lstsq_svd(a.clone(), &b, 1e-10).and_then(|(coef, _)| {
        let c: Vec<f64> = coef.iter().skip(1).take(n_phi).cloned().collect();
        let gain = c.iter().sum::<f64>() / phi_max;
        if !(gain > 0.0 && gain.is_finite()) {
            return None;
        }
        let floor = 1e-3 * phi_max / n_phi as f64;
        let phi: Vec<f64> = c.iter().map(|cj| (cj / gain).max(floor)).collect();
        let psi: Vec<f64> = (0..n_psi)
            .map(|k| {
                let ratio = coef[1 + n_phi + k] / c[n_phi - 1];
                if ratio.is_finite() {
                    ratio.clamp(0.02, 0.98)
                } else {
                    even_psi[k]
                }
            })
            .collect();
        Some((coef[0], gain, phi, psi))
    });

    let (intercept, gain, phi, psi) = match linear {
        Some((a0, gain, phi, psi)) => (a0, gain, phi, psi),
        None => (mean_n - phi_max / 2.0, 1.0, even_phi, even_psi),
    };

    let mut alpha = vec![0.0; hyper.degree + 1];
    alpha[0] = intercept + gain * phi_max / 2.0;
    alpha[1] = gain * phi_max / 2.0;

    let rss: f64 = observations
        .iter()
        .map(|o| {
            let flux = compose_unchecked(&design.rows[o.run_index], &phi, &psi);
            (o.n - expected_reading(flux, &alpha, phi_max)).powi(2)
        })
        .sum();
    let scale = observations.iter().map(|o| o.n.abs()).fold(0.0, f64::max).max(1e-300);
    let sigma = (rss / n_obs.max(1) as f64).sqrt().max(1e-9 * scale);

    ModelParams {
        phi,
        psi,
        alpha,
        gamma: phi_max / 10.0,
        sigma,
    }
}

fn jittered(start: &ModelParams, seed: u64, attempt: usize) -> ModelParams {
    let mut rng = rng_for(seed, streams::RESTART, attempt as u64);
    let mut out = start.clone();
    for phi in &mut out.phi {
        let z: f64 = rng.sample(StandardNormal);
        *phi *= (0.05 * z).exp();
    }
    out
}

/// Conditional maximizer of the penalty over `gamma` for fixed `alpha`,
/// ignoring the small exponential term: `gamma^2 = Q / p`.
fn conditional_gamma(alpha: &[f64], phi_max: f64) -> f64 {
    let p = (alpha.len() - 1) as f64;
    let q = (alpha[1] - phi_max / 2.0).powi(2) + alpha[2..].iter().map(|a| a * a).sum::<f64>();
    (q / p).sqrt().max(1e-12 * phi_max)
}

/// One local maximization from `start`.
///
/// The penalty is unbounded above as `gamma -> 0` with `alpha` pinned to the
/// straight line, so an unguarded ascent can slide into that funnel instead
/// of the interior maximum. When `staged`, the fit first runs with `gamma`
/// held at its starting value, then frees it from the conditional optimum.
fn solve_one(
    objective: &LikelihoodObjective<'_>,
    start: &ModelParams,
    opt: &OptimizerConfig,
    staged: bool,
) -> Result<Maximum> {
    let settings = opt.newton();
    let packing = objective.packing();
    let mut theta = packing.pack(start);
    if staged {
        let pinned = Pinned {
            inner: objective,
            index: packing.gamma_at(),
            value: theta[packing.gamma_at()],
        };
        let first = maximize(&pinned, &pinned.reduce(&theta), &settings)?;
        theta = pinned.expand(&first.x);
        let mid = packing.unpack(&theta);
        theta[packing.gamma_at()] = conditional_gamma(&mid.alpha, objective.phi_max()).ln();
    }
    maximize(objective, &theta, &settings)
}

fn run_starts(
    objective: &LikelihoodObjective<'_>,
    starts: impl IntoIterator<Item = (ModelParams, bool)>,
    opt: &OptimizerConfig,
    stop_on_convergence: bool,
) -> Result<Maximum> {
    let mut best: Option<Maximum> = None;
    let mut last_err = None;
    for (start, staged) in starts {
        match solve_one(objective, &start, opt, staged) {
            Ok(m) if m.value.is_finite() => {
                let done = stop_on_convergence && m.converged;
                if best.as_ref().is_none_or(|b| m.value > b.value) {
                    best = Some(m);
                }
                if done {
                    break;
                }
            }
            Ok(_) => last_err = Some(FluxcalError::OptimizationFailed("non-finite optimum".into())),
            Err(e) => last_err = Some(e),
        }
    }
    best.ok_or_else(|| {
        last_err.unwrap_or_else(|| FluxcalError::OptimizationFailed("no starting point".into()))
    })
}

fn finish(
    observations: &[Observation],
    design: &RunDesign,
    hyper: &Hyperparams,
    objective: &LikelihoodObjective<'_>,
    max: Maximum,
) -> Result<FitResult> {
    let params = objective.packing().unpack(&max.x);
    let beta = derive_beta(&params.alpha, hyper.phi_max, DEFAULT_BETA_GRID)?;
    let fitted_fluxes = observations
        .iter()
        .map(|o| compose_unchecked(&design.rows[o.run_index], &params.phi, &params.psi))
        .collect();
    Ok(FitResult {
        params,
        beta,
        fitted_fluxes,
        loglik: max.value,
        converged: max.converged,
        iterations: max.iterations,
        gradient_norm: max.gradient_norm,
        phi_max: hyper.phi_max,
    })
}

/// Maximum-likelihood fit from the default starting point plus jittered
/// restarts. The highest log-likelihood wins.
pub fn fit_mle(
    observations: &[Observation],
    design: &RunDesign,
    hyper: &Hyperparams,
    opt: &OptimizerConfig,
) -> Result<FitResult> {
    check_inputs(observations, design, hyper, opt)?;
    let start = initial_params(observations, design, hyper);
    let objective = LikelihoodObjective::new(observations, design, hyper);
    let starts = std::iter::once(start.clone())
        .chain((1..opt.restarts).map(|r| jittered(&start, opt.seed, r)))
        .map(|s| (s, true));
    let max = run_starts(&objective, starts, opt, false)?;
    finish(observations, design, hyper, &objective, max)
}

/// Fit warm-started at `start`. If the direct ascent does not converge, the
/// staged ascent from `start` and then jittered restarts are tried in turn.
pub fn fit_mle_from(
    observations: &[Observation],
    design: &RunDesign,
    hyper: &Hyperparams,
    opt: &OptimizerConfig,
    start: &ModelParams,
) -> Result<FitResult> {
    check_inputs(observations, design, hyper, opt)?;
    start.check_against(design, hyper)?;
    let objective = LikelihoodObjective::new(observations, design, hyper);
    let starts = std::iter::once((start.clone(), false))
        .chain(std::iter::once((start.clone(), true)))
        .chain((1..opt.restarts).map(|r| (jittered(start, opt.seed, r), true)));
    let max = run_starts(&objective, starts, opt, true)?;
    finish(observations, design, hyper, &objective, max)
}

/// Gradient of the penalized log-likelihood in unconstrained coordinates at
/// `params`, by central differences of the objective value.
pub fn finite_difference_gradient(
    observations: &[Observation],
    design: &RunDesign,
    hyper: &Hyperparams,
    params: &ModelParams,
    step: f64,
) -> Vec<f64> {
    use crate::optim::Objective;
    let objective = LikelihoodObjective::new(observations, design, hyper);
    let theta = objective.packing().pack(params);
    (0..theta.len())
        .map(|k| {
            let mut tp = theta.clone();
            let mut tm = theta.clone();
            tp[k] += step;
            tm[k] -= step;
            (objective.value(&tp) - objective.value(&tm)) / (2.0 * step)
        })
        .collect()
}
