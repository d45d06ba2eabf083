//! JSON configuration. Every key is optional; unknown keys are rejected.
//!
//! ```json
//! {
//!   "mode": "sphere",            // or "conjoiner"
//!   "phi_max": 1.0,              // flux scale, default 1
//!   "tau": 0.001,                // default 1e-3 * phi_max
//!   "gamma_prior_mean": 1.0,     // default phi_max; the penalty rate is its inverse
//!   "degree": 3,
//!   "noise_model": "constant",   // default "piecewise_proportional" in conjoiner mode
//!   "kappa0": 0.2,               // required in conjoiner mode
//!   "legacy_phi_max": 1.0,       // target of the legacy fit, default phi_max
//!   "level": 0.95,               // interval level
//!   "optimizer": { "max_iterations": 200, "gradient_tolerance": 1e-6, "restarts": 2, "seed": 0 },
//!   "bootstrap": { "replicates": 1000, "drift_mode": "none", "per_lamp_variance": null,
//!                  "max_failure_fraction": 0.1, "reject_unconverged": false },
//!   "scenario": { "shot_coeff": 1.1e-4, "elec_sd": 1e-3, "drift_pct": 0.5 },
//!   "conjoiner": { ... two-beam generator settings ... }
//! }
//! ```

use std::fs;
use std::path::Path;

use clap::ValueEnum;
use fluxcal::bootstrap::BootstrapConfig;
use fluxcal::simulator::{ConjoinerSpec, ScenarioSpec};
use fluxcal::{Hyperparams, NoiseModel, OptimizerConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{input, CliError};
use crate::output::canonical_json;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ModeArg {
    Sphere,
    Conjoiner,
}

/// Overrides of the simulated sphere noise and drift.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioOverrides {
    pub shot_coeff: Option<f64>,
    pub elec_sd: Option<f64>,
    pub drift_pct: Option<f64>,
}

impl ScenarioOverrides {
    pub fn apply(&self, mut spec: ScenarioSpec) -> ScenarioSpec {
        if let Some(v) = self.shot_coeff {
            spec.shot_coeff = v;
        }
        if let Some(v) = self.elec_sd {
            spec.elec_sd = v;
        }
        if let Some(v) = self.drift_pct {
            spec.drift_pct = v;
        }
        spec
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub mode: Option<ModeArg>,
    pub phi_max: Option<f64>,
    pub tau: Option<f64>,
    pub gamma_prior_mean: Option<f64>,
    pub degree: Option<usize>,
    pub noise_model: Option<NoiseModel>,
    pub kappa0: Option<f64>,
    pub legacy_phi_max: Option<f64>,
    pub level: Option<f64>,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub bootstrap: BootstrapConfig,
    pub scenario: Option<ScenarioOverrides>,
    pub conjoiner: Option<ConjoinerSpec>,
}

/// Configuration with every default filled in.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Resolved {
    pub mode: ModeArg,
    pub hyper: Hyperparams,
    pub legacy_phi_max: f64,
    pub level: f64,
    pub optimizer: OptimizerConfig,
    pub bootstrap: BootstrapConfig,
    pub scenario: ScenarioOverrides,
    pub conjoiner: ConjoinerSpec,
}

impl Resolved {
    /// SHA-256 of the canonical JSON of the resolved configuration.
    pub fn sha256(&self) -> String {
        hex::encode(Sha256::digest(canonical_json(self)))
    }

    /// Hyperparameters of the legacy fit.
    pub fn legacy_hyper(&self) -> Hyperparams {
        Hyperparams {
            phi_max: self.legacy_phi_max,
            ..self.hyper.clone()
        }
    }
}

pub fn read_config_file(path: &Path) -> Result<ConfigFile, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

pub fn load(path: Option<&Path>, mode_flag: Option<ModeArg>) -> Result<Resolved, CliError> {
    let file = match path {
        Some(p) => read_config_file(p)?,
        None => ConfigFile::default(),
    };
    resolve(file, mode_flag)
}

pub fn resolve(file: ConfigFile, mode_flag: Option<ModeArg>) -> Result<Resolved, CliError> {
    let mode = mode_flag.or(file.mode).unwrap_or(ModeArg::Sphere);
    let phi_max = file.phi_max.unwrap_or(1.0);
    if !(phi_max > 0.0 && phi_max.is_finite()) {
        return input(format!("phi_max must be positive, got {phi_max}"));
    }
    let mut hyper = Hyperparams::new(phi_max);
    if let Some(tau) = file.tau {
        hyper = hyper.with_tau(tau);
    }
    if let Some(mean) = file.gamma_prior_mean {
        if !(mean > 0.0) {
            return input(format!("gamma_prior_mean must be positive, got {mean}"));
        }
        hyper = hyper.with_gamma_prior_mean(mean);
    }
    if let Some(p) = file.degree {
        hyper = hyper.with_degree(p);
    }
    let noise = file.noise_model.unwrap_or(match mode {
        ModeArg::Sphere => NoiseModel::Constant,
        ModeArg::Conjoiner => NoiseModel::PiecewiseProportional,
    });
    let kappa0 = match (mode, noise, file.kappa0) {
        (_, _, Some(k)) => k,
        (ModeArg::Conjoiner, _, None) => return input("conjoiner mode requires `kappa0` in the configuration"),
        (_, NoiseModel::PiecewiseProportional, None) => {
            return input("the piecewise_proportional noise model requires `kappa0`")
        }
        _ => hyper.kappa0,
    };
    hyper = hyper.with_noise(noise, kappa0);
    hyper.validate()?;
    file.optimizer.validate()?;
    file.bootstrap.validate()?;

    let level = file.level.unwrap_or(0.95);
    if !(level > 0.0 && level < 1.0) {
        return input(format!("level must lie in (0, 1), got {level}"));
    }
    let legacy_phi_max = file.legacy_phi_max.unwrap_or(phi_max);
    if !(legacy_phi_max > 0.0 && legacy_phi_max.is_finite()) {
        return input(format!("legacy_phi_max must be positive, got {legacy_phi_max}"));
    }
    let conjoiner = file.conjoiner.unwrap_or_default();
    conjoiner.validate()?;

    Ok(Resolved {
        mode,
        hyper,
        legacy_phi_max,
        level,
        optimizer: file.optimizer,
        bootstrap: file.bootstrap,
        scenario: file.scenario.unwrap_or_default(),
        conjoiner,
    })
}
