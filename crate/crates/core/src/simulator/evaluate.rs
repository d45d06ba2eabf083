use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{simulate_dataset, ScenarioSpec};
use crate::bootstrap::{percentile_interval, run_bootstrap, BootstrapConfig, DriftMode};
use crate::error::{invalid, Result};
use crate::estimator::{fit_mle, FitResult, OptimizerConfig};
use crate::model::Hyperparams;
use crate::seed::{derive_seed, streams};

/// Bias and coverage of one parameter across datasets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSummary {
    pub name: String,
    pub truth: f64,
    /// One estimate per retained dataset, in dataset order.
    pub estimates: Vec<f64>,
    pub intervals: Vec<(f64, f64)>,
    pub relative_bias: f64,
    /// Fraction of intervals that contain the truth.
    pub coverage: f64,
    pub mean_width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub scenario: u8,
    pub datasets: usize,
    pub replicates: usize,
    pub level: f64,
    /// Seeds of the datasets that were fitted, in order.
    pub dataset_seeds: Vec<u64>,
    /// Datasets whose fit or bootstrap failed.
    pub dropped: Vec<u64>,
    /// Failed bootstrap replicates per retained dataset.
    pub replicate_failures: Vec<usize>,
    pub parameters: Vec<ParameterSummary>,
}

impl EvaluationReport {
    pub fn parameter(&self, name: &str) -> Option<&ParameterSummary> {
        self.parameters.iter().find(|p| p.name == name)
    }
}

/// Bootstrap settings for a scenario: no drift for scenario 1, independent
/// drift for 2 and shared drift for 3 and 4, with the per-lamp variance of
/// the uniform drift the simulator applies.
pub fn scenario_bootstrap_config(spec: &ScenarioSpec, replicates: usize, master_seed: u64) -> BootstrapConfig {
    let drift_mode = match spec.correlated_drift {
        _ if spec.drift_pct == 0.0 => DriftMode::None,
        Some(true) => DriftMode::Correlated,
        _ => DriftMode::Independent,
    };
    BootstrapConfig {
        replicates,
        master_seed,
        drift_mode,
        per_lamp_variance: Some(spec.per_lamp_drift_variance()),
        ..Default::default()
    }
}

/// Hyperparameters used to fit simulated sphere data.
pub fn simulation_hyperparams() -> Hyperparams {
    Hyperparams::new(1.0).with_tau(1e-3).with_degree(3)
}

struct DatasetOutcome {
    seed: u64,
    failures: usize,
    /// (estimate, interval) per parameter.
    values: Vec<(f64, (f64, f64))>,
}

fn tracked(fit: &FitResult) -> Vec<f64> {
    let mut v = fit.beta.clone();
    v.extend(&fit.params.psi);
    v.extend(&fit.params.phi);
    v
}

fn one_dataset(
    spec: &ScenarioSpec,
    seed: u64,
    replicates: usize,
    level: f64,
    hyper: &Hyperparams,
    opt: &OptimizerConfig,
) -> Result<DatasetOutcome> {
    let ds = simulate_dataset(&spec.clone().with_seed(seed))?;
    let base = fit_mle(&ds.observations, &ds.design, hyper, opt)?;
    let boot = scenario_bootstrap_config(spec, replicates, derive_seed(seed, streams::EVALUATION, 1));
    let ensemble = run_bootstrap(&ds.observations, &ds.design, hyper, opt, &base, &boot)?;
    let per_rep: Vec<Vec<f64>> = ensemble.replicates.iter().map(tracked).collect();
    let values = tracked(&base)
        .into_iter()
        .enumerate()
        .map(|(i, est)| {
            let column: Vec<f64> = per_rep.iter().map(|r| r[i]).collect();
            Ok((est, percentile_interval(&column, level)?))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DatasetOutcome {
        seed,
        failures: ensemble.failures,
        values,
    })
}

/// Simulates `n_datasets` datasets for `spec`, fits and bootstraps each,
/// and reports relative bias and interval coverage for every `beta_m`,
/// `psi_k` and `phi_j`. Dataset seeds derive from `spec.seed`.
pub fn evaluate_scenario(
    spec: &ScenarioSpec,
    n_datasets: usize,
    replicates: usize,
    level: f64,
    opt: &OptimizerConfig,
) -> Result<EvaluationReport> {
    spec.validate()?;
    if n_datasets == 0 {
        return invalid("at least one dataset is required");
    }
    let hyper = simulation_hyperparams();
    let seeds: Vec<u64> = (0..n_datasets)
        .map(|d| derive_seed(spec.seed, streams::EVALUATION, 1000 + d as u64))
        .collect();
    let outcomes: Vec<(u64, Result<DatasetOutcome>)> = seeds
        .par_iter()
        .map(|&s| (s, one_dataset(spec, s, replicates, level, &hyper, opt)))
        .collect();

    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for (seed, outcome) in outcomes {
        match outcome {
            Ok(o) => kept.push(o),
            Err(_) => dropped.push(seed),
        }
    }
    if kept.is_empty() {
        return invalid("every dataset failed to fit");
    }

    let mut truth: Vec<(String, f64)> = spec
        .beta_true
        .iter()
        .enumerate()
        .map(|(m, b)| (format!("beta_{m}"), *b))
        .collect();
    truth.extend(spec.psi_true.iter().enumerate().map(|(k, p)| (format!("psi_{}", k + 1), *p)));
    // scenario 4 baselines vary by dataset; the mean baseline is 1/J
    let nominal = 1.0 / super::LAMPS as f64;
    truth.extend((0..super::LAMPS).map(|j| (format!("phi_{}", j + 1), nominal)));

    let per_dataset_truth: Vec<Vec<f64>> = if spec.identical_lamps {
        vec![truth.iter().map(|t| t.1).collect(); kept.len()]
    } else {
        kept.iter()
            .map(|o| {
                let ds = simulate_dataset(&spec.clone().with_seed(o.seed))?;
                let mut t: Vec<f64> = truth.iter().take(spec.beta_true.len() + spec.psi_true.len()).map(|t| t.1).collect();
                t.extend(ds.truth.phi);
                Ok(t)
            })
            .collect::<Result<_>>()?
    };

    let parameters = truth
        .iter()
        .enumerate()
        .map(|(i, (name, nominal_truth))| {
            let estimates: Vec<f64> = kept.iter().map(|o| o.values[i].0).collect();
            let intervals: Vec<(f64, f64)> = kept.iter().map(|o| o.values[i].1).collect();
            let n = kept.len() as f64;
            let rel: f64 = estimates
                .iter()
                .zip(&per_dataset_truth)
                .map(|(e, t)| (e - t[i]) / t[i])
                .sum::<f64>()
                / n;
            let covered = intervals
                .iter()
                .zip(&per_dataset_truth)
                .filter(|((lo, hi), t)| *lo <= t[i] && t[i] <= *hi)
                .count();
            ParameterSummary {
                name: name.clone(),
                truth: *nominal_truth,
                relative_bias: rel,
                coverage: covered as f64 / n,
                mean_width: intervals.iter().map(|(lo, hi)| hi - lo).sum::<f64>() / n,
                estimates,
                intervals,
            }
        })
        .collect();

    Ok(EvaluationReport {
        scenario: spec.id,
        datasets: n_datasets,
        replicates,
        level,
        dataset_seeds: kept.iter().map(|o| o.seed).collect(),
        dropped,
        replicate_failures: kept.iter().map(|o| o.failures).collect(),
        parameters,
    })
}
