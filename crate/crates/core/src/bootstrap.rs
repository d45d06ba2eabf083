//! Pairs bootstrap with optional perturbation of the flux scale, and the
//! reductions of a replicate ensemble to standard errors, percentile
//! intervals and residual bands.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::{Observation, RunDesign};
use crate::error::{invalid, FluxcalError, Result};
use crate::estimator::{fit_mle_from, FitResult, OptimizerConfig};
use crate::model::{expected_reading, noise_sd_raw, Hyperparams};
use crate::seed::{derive_seed, rng_for, streams};

/// How the flux scale is perturbed in each replicate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftMode {
    None,
    /// Lamps drift independently: `Var = J v`.
    Independent,
    /// Lamps drift together: `Var = J^2 v`.
    Correlated,
    /// Variance of the total flux given directly.
    Explicit(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BootstrapConfig {
    pub replicates: usize,
    pub master_seed: u64,
    pub drift_mode: DriftMode,
    /// Variance of a single lamp flux; required by the independent and
    /// correlated drift modes.
    pub per_lamp_variance: Option<f64>,
    /// Largest tolerated fraction of failed replicates.
    pub max_failure_fraction: f64,
    /// Worker threads; 0 uses the ambient rayon pool.
    pub workers: usize,
    /// Count replicates whose optimizer missed the gradient tolerance as
    /// failures.
    pub reject_unconverged: bool,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            replicates: 1000,
            master_seed: 0,
            drift_mode: DriftMode::None,
            per_lamp_variance: None,
            max_failure_fraction: 0.10,
            workers: 0,
            reject_unconverged: false,
        }
    }
}

impl BootstrapConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return invalid("bootstrap needs at least one replicate");
        }
        if !(0.0..=1.0).contains(&self.max_failure_fraction) {
            return invalid("max_failure_fraction must lie in [0, 1]");
        }
        match (self.drift_mode, self.per_lamp_variance) {
            (DriftMode::Explicit(v), _) if !(v >= 0.0 && v.is_finite()) => {
                invalid("explicit drift variance must be finite and non-negative")
            }
            (DriftMode::Independent | DriftMode::Correlated, None) => {
                invalid("per_lamp_variance is required when lamps drift")
            }
            (_, Some(v)) if !(v >= 0.0 && v.is_finite()) => {
                invalid("per_lamp_variance must be finite and non-negative")
            }
            _ => Ok(()),
        }
    }
}

/// Variance of the total flux used to perturb `phi_max`, for `lamps` lamps.
pub fn drift_sigma2(config: &BootstrapConfig, lamps: usize) -> f64 {
    let v = config.per_lamp_variance.unwrap_or(0.0);
    let j = lamps as f64;
    match config.drift_mode {
        DriftMode::None => 0.0,
        DriftMode::Independent => j * v,
        DriftMode::Correlated => j * j * v,
        DriftMode::Explicit(var) => var,
    }
}

/// `N` observations drawn uniformly with replacement. Each keeps its run
/// index, so the reading stays paired with its design row.
pub fn resample_pairs(observations: &[Observation], seed: u64) -> Vec<Observation> {
    let mut rng = rng_for(seed, streams::BOOTSTRAP, 0);
    let n = observations.len();
    (0..n).map(|_| observations[rng.random_range(0..n)]).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapEnsemble {
    pub requested: usize,
    pub replicates: Vec<FitResult>,
    /// Seed of each entry of `replicates`.
    pub seeds: Vec<u64>,
    pub failures: usize,
    pub failed_seeds: Vec<u64>,
}

impl BootstrapEnsemble {
    /// One value per replicate.
    pub fn values(&self, f: impl Fn(&FitResult) -> f64) -> Vec<f64> {
        self.replicates.iter().map(f).collect()
    }

    pub fn failure_fraction(&self) -> f64 {
        self.failures as f64 / self.requested as f64
    }
}

/// Seed of replicate `b` under `master`.
pub fn replicate_seed(master: u64, b: usize) -> u64 {
    derive_seed(master, streams::BOOTSTRAP, b as u64)
}

fn one_replicate(
    observations: &[Observation],
    design: &RunDesign,
    hyper: &Hyperparams,
    opt: &OptimizerConfig,
    base: &FitResult,
    sigma2: f64,
    seed: u64,
    reject_unconverged: bool,
) -> Option<FitResult> {
    let sample = resample_pairs(observations, seed);
    let mut hyper_b = hyper.clone();
    if sigma2 > 0.0 {
        let mut rng = rng_for(seed, streams::BOOTSTRAP, 1);
        let z: f64 = rng.sample(StandardNormal);
        hyper_b.phi_max = hyper.phi_max + sigma2.sqrt() * z;
        if !(hyper_b.phi_max > 0.0) {
            return None;
        }
    }
    let opt_b = OptimizerConfig { seed, ..*opt };
    let fit = fit_mle_from(&sample, design, &hyper_b, &opt_b, &base.params).ok()?;
    // a replicate that collapses where the base fit did not has left the
    // base fit's regime
    if (fit.is_degenerate() && !base.is_degenerate()) || (reject_unconverged && !fit.converged) {
        return None;
    }
    Some(fit)
}

/// Refits `config.replicates` resampled datasets, warm-started at `base`.
///
/// Replicate seeds depend only on the master seed and the replicate index,
/// so the ensemble does not depend on the number of workers.
pub fn run_bootstrap(
    observations: &[Observation],
    design: &RunDesign,
    hyper: &Hyperparams,
    opt: &OptimizerConfig,
    base: &FitResult,
    config: &BootstrapConfig,
) -> Result<BootstrapEnsemble> {
    config.validate()?;
    hyper.validate()?;
    opt.validate()?;
    if observations.is_empty() {
        return invalid("no observations to resample");
    }
    base.params.check_against(design, hyper)?;
    let sigma2 = drift_sigma2(config, design.n_fluxes());

    let run = || {
        (0..config.replicates)
            .into_par_iter()
            .map(|b| {
                let seed = replicate_seed(config.master_seed, b);
                let fit = one_replicate(
                    observations,
                    design,
                    hyper,
                    opt,
                    base,
                    sigma2,
                    seed,
                    config.reject_unconverged,
                );
                (seed, fit)
            })
            .collect::<Vec<_>>()
    };
    let outcomes = if config.workers > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(config.workers)
            .build()
            .map_err(|e| FluxcalError::Internal(e.to_string()))?
            .install(run)
    } else {
        run()
    };

    let mut ensemble = BootstrapEnsemble {
        requested: config.replicates,
        replicates: Vec::new(),
        seeds: Vec::new(),
        failures: 0,
        failed_seeds: Vec::new(),
    };
    for (seed, fit) in outcomes {
        match fit {
            Some(f) => {
                ensemble.replicates.push(f);
                ensemble.seeds.push(seed);
            }
            None => {
                ensemble.failures += 1;
                ensemble.failed_seeds.push(seed);
            }
        }
    }
    if ensemble.failure_fraction() > config.max_failure_fraction {
        return Err(FluxcalError::EnsembleQuality {
            failures: ensemble.failures,
            total: ensemble.requested,
            limit: config.max_failure_fraction,
        });
    }
    Ok(ensemble)
}

/// Sample standard deviation with divisor `B - 1`.
pub fn standard_error(values: &[f64]) -> Result<f64> {
    if values.len() < 2 {
        return invalid("standard error needs at least two values");
    }
    let b = values.len() as f64;
    // shifted by the first value so constant input gives exactly zero
    let shift = values[0];
    let mean = values.iter().map(|v| v - shift).sum::<f64>() / b;
    let ss: f64 = values.iter().map(|v| (v - shift - mean).powi(2)).sum();
    Ok((ss / (b - 1.0)).sqrt())
}

/// Smallest ensemble accepted by [`percentile_interval`].
pub const MIN_PERCENTILE_VALUES: usize = 20;

/// Empirical quantile of sorted values, interpolating linearly between
/// order statistics at zero-based position `q (B - 1)`.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = q * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Central percentile interval at `level`.
pub fn percentile_interval(values: &[f64], level: f64) -> Result<(f64, f64)> {
    if values.len() < MIN_PERCENTILE_VALUES {
        return invalid(format!(
            "percentile interval needs at least {MIN_PERCENTILE_VALUES} values, got {}",
            values.len()
        ));
    }
    if !(level > 0.0 && level < 1.0) {
        return invalid(format!("level must lie in (0, 1), got {level}"));
    }
    if values.iter().any(|v| v.is_nan()) {
        return invalid("NaN among replicate values");
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok((
        quantile_sorted(&sorted, (1.0 - level) / 2.0),
        quantile_sorted(&sorted, (1.0 + level) / 2.0),
    ))
}

/// Named parameter vector of a fit: `beta_m`, `alpha_m`, `phi_j`, `psi_k`,
/// `gamma`, `sigma`.
pub fn parameter_vector(fit: &FitResult) -> Vec<(String, f64)> {
    let p = &fit.params;
    let mut out = Vec::new();
    out.extend(fit.beta.iter().enumerate().map(|(m, v)| (format!("beta_{m}"), *v)));
    out.extend(p.alpha.iter().enumerate().map(|(m, v)| (format!("alpha_{m}"), *v)));
    out.extend(p.phi.iter().enumerate().map(|(j, v)| (format!("phi_{}", j + 1), *v)));
    out.extend(p.psi.iter().enumerate().map(|(k, v)| (format!("psi_{}", k + 1), *v)));
    out.push(("gamma".into(), p.gamma));
    out.push(("sigma".into(), p.sigma));
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub name: String,
    pub estimate: f64,
    pub standard_error: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Standard error and percentile interval of every parameter.
pub fn summarize(base: &FitResult, ensemble: &BootstrapEnsemble, level: f64) -> Result<Vec<SummaryRow>> {
    let vectors: Vec<Vec<(String, f64)>> = ensemble.replicates.iter().map(parameter_vector).collect();
    parameter_vector(base)
        .into_iter()
        .enumerate()
        .map(|(i, (name, estimate))| {
            let values: Vec<f64> = vectors.iter().map(|v| v[i].1).collect();
            let (lower, upper) = percentile_interval(&values, level)?;
            Ok(SummaryRow {
                name,
                estimate,
                standard_error: standard_error(&values)?,
                lower,
                upper,
            })
        })
        .collect()
}

/// Pointwise bands for the residual `reading - base mean reading`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualBands {
    /// Sorted distinct fitted fluxes of the base fit.
    pub flux: Vec<f64>,
    pub base_reading: Vec<f64>,
    pub confidence_lower: Vec<f64>,
    pub confidence_upper: Vec<f64>,
    pub prediction_lower: Vec<f64>,
    pub prediction_upper: Vec<f64>,
}

impl ResidualBands {
    /// Residual of each observation against the base fit, and whether it
    /// lies inside the prediction band at its fitted flux.
    pub fn classify(&self, observations: &[Observation], base: &FitResult) -> Vec<(f64, f64, bool)> {
        observations
            .iter()
            .zip(&base.fitted_fluxes)
            .map(|(o, &flux)| {
                let i = self
                    .flux
                    .binary_search_by(|g| g.total_cmp(&flux))
                    .unwrap_or_else(|i| i.min(self.flux.len() - 1));
                let r = o.n - self.base_reading[i];
                (flux, r, r >= self.prediction_lower[i] && r <= self.prediction_upper[i])
            })
            .collect()
    }

    /// Fraction of observations whose residual is inside the prediction band.
    pub fn prediction_coverage(&self, observations: &[Observation], base: &FitResult) -> f64 {
        let c = self.classify(observations, base);
        c.iter().filter(|x| x.2).count() as f64 / c.len() as f64
    }
}

/// Confidence and prediction bands for the residuals of `base`, evaluated
/// at its fitted fluxes.
///
/// The confidence band is the percentile interval of the replicate mean
/// responses minus the base response. The prediction band adds one noise
/// draw per replicate and grid point, with the replicate's own noise scale.
pub fn residual_bands(
    base: &FitResult,
    ensemble: &BootstrapEnsemble,
    hyper: &Hyperparams,
    level: f64,
    seed: u64,
) -> Result<ResidualBands> {
    if ensemble.replicates.is_empty() {
        return invalid("empty bootstrap ensemble");
    }
    let mut flux = base.fitted_fluxes.clone();
    flux.sort_by(f64::total_cmp);
    flux.dedup();
    let base_reading: Vec<f64> = flux.iter().map(|&f| base.mean_reading(f)).collect();

    let draws: Vec<(Vec<f64>, Vec<f64>)> = ensemble
        .replicates
        .par_iter()
        .enumerate()
        .map(|(b, rep)| {
            let mut rng = rng_for(seed, streams::BANDS, b as u64);
            let hyper_b = Hyperparams {
                phi_max: rep.phi_max,
                ..hyper.clone()
            };
            let mean: Vec<f64> = flux
                .iter()
                .map(|&f| expected_reading(f, &rep.params.alpha, rep.phi_max))
                .collect();
            let noisy = flux
                .iter()
                .zip(&mean)
                .map(|(&f, &m)| {
                    let z: f64 = rng.sample(StandardNormal);
                    m + noise_sd_raw(f, rep.params.sigma, &hyper_b) * z
                })
                .collect();
            (mean, noisy)
        })
        .collect();

    let n = flux.len();
    let mut out = ResidualBands {
        flux,
        base_reading,
        confidence_lower: Vec::with_capacity(n),
        confidence_upper: Vec::with_capacity(n),
        prediction_lower: Vec::with_capacity(n),
        prediction_upper: Vec::with_capacity(n),
    };
    for i in 0..n {
        let centre = out.base_reading[i];
        let means: Vec<f64> = draws.iter().map(|d| d.0[i] - centre).collect();
        let noisy: Vec<f64> = draws.iter().map(|d| d.1[i] - centre).collect();
        let (cl, cu) = percentile_interval(&means, level)?;
        let (pl, pu) = percentile_interval(&noisy, level)?;
        out.confidence_lower.push(cl);
        out.confidence_upper.push(cu);
        out.prediction_lower.push(pl);
        out.prediction_upper.push(pu);
    }
    Ok(out)
}
