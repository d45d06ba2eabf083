use std::path::Path;

use fluxcal::bootstrap::{parameter_vector, residual_bands, run_bootstrap, BootstrapEnsemble, MIN_PERCENTILE_VALUES};
use fluxcal::Hyperparams;
use serde::{Deserialize, Serialize};

use super::{load_inputs, read_json, spread, FitFile};
use crate::config::ModeArg;
use crate::error::{input, CliError};
use crate::output::{ensure_dir, fmt_f64, write_json, Provenance, Table};

/// Body of `ensemble.json`. Replicate fits are stored without their
/// per-observation fluxes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnsembleFile {
    pub config_sha256: String,
    pub hyperparams: Hyperparams,
    pub level: f64,
    /// Fraction of residuals inside the prediction band; absent when the
    /// ensemble is too small for percentile bands.
    pub prediction_coverage: Option<f64>,
    pub ensemble: BootstrapEnsemble,
}

/// Writes `ensemble.json`, `summary.csv` and, for ensembles of at least 20
/// replicates, `bands.csv`.
pub fn run(
    data: &Path,
    config: Option<&Path>,
    fit_path: &Path,
    replicates: Option<usize>,
    seed: Option<u64>,
    out: &Path,
    mode: Option<ModeArg>,
) -> Result<(), CliError> {
    let (mut resolved, data) = load_inputs(data, config, mode)?;
    let fit_file: FitFile = read_json(fit_path)?;
    if fit_file.mode != resolved.mode || fit_file.hyperparams != resolved.hyper {
        return input(format!(
            "{} was fitted under a different configuration than the one given",
            fit_path.display()
        ));
    }
    if fit_file.fit.fitted_fluxes.len() != data.observations.len() {
        return input(format!("{} does not belong to this data file", fit_path.display()));
    }
    if let Some(b) = replicates {
        resolved.bootstrap.replicates = b;
    }
    if let Some(s) = seed {
        resolved.bootstrap.master_seed = s;
    }
    resolved.bootstrap.validate()?;
    let base = &fit_file.fit;
    let config = &resolved.bootstrap;
    let ensemble = run_bootstrap(&data.observations, &data.design, &resolved.hyper, &resolved.optimizer, base, config)?;

    let sha = resolved.sha256();
    let prov = Provenance::new("bootstrap", Some(config.master_seed), &sha);
    ensure_dir(out)?;

    let mut summary = Table::new(["name", "estimate", "standard_error", "lower", "upper"]);
    let vectors: Vec<Vec<(String, f64)>> = ensemble.replicates.iter().map(parameter_vector).collect();
    for (i, (name, estimate)) in parameter_vector(base).into_iter().enumerate() {
        let values: Vec<f64> = vectors.iter().map(|v| v[i].1).collect();
        let (se, lo, hi) = spread(&values, resolved.level)?;
        summary.push(vec![name, fmt_f64(estimate), fmt_f64(se), fmt_f64(lo), fmt_f64(hi)]);
    }
    summary.write(&out.join("summary.csv"), &prov)?;

    let prediction_coverage = if ensemble.replicates.len() >= MIN_PERCENTILE_VALUES {
        let bands = residual_bands(base, &ensemble, &resolved.hyper, resolved.level, config.master_seed)?;
        let mut t = Table::new([
            "flux",
            "base_reading",
            "confidence_lower",
            "confidence_upper",
            "prediction_lower",
            "prediction_upper",
        ]);
        for i in 0..bands.flux.len() {
            t.push(
                [
                    bands.flux[i],
                    bands.base_reading[i],
                    bands.confidence_lower[i],
                    bands.confidence_upper[i],
                    bands.prediction_lower[i],
                    bands.prediction_upper[i],
                ]
                .map(fmt_f64)
                .to_vec(),
            );
        }
        t.write(&out.join("bands.csv"), &prov)?;
        Some(bands.prediction_coverage(&data.observations, base))
    } else {
        eprintln!("warning: fewer than {MIN_PERCENTILE_VALUES} replicates; no percentile intervals or bands");
        None
    };

    let mut ensemble = ensemble;
    for r in &mut ensemble.replicates {
        r.fitted_fluxes.clear();
    }
    let body = EnsembleFile {
        config_sha256: sha,
        hyperparams: resolved.hyper,
        level: resolved.level,
        prediction_coverage,
        ensemble,
    };
    write_json(&out.join("ensemble.json"), &prov, &body)
}
