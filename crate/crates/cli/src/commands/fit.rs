use std::path::Path;

use fluxcal::fit_mle;

use super::{load_inputs, FitFile};
use crate::config::ModeArg;
use crate::error::CliError;
use crate::output::{ensure_dir, fmt_f64, write_json, Provenance, Table};

/// Writes `fit.json` and `residuals.csv`.
pub fn run(data: &Path, config: Option<&Path>, out: &Path, mode: Option<ModeArg>) -> Result<(), CliError> {
    let (resolved, data) = load_inputs(data, config, mode)?;
    let fit = fit_mle(&data.observations, &data.design, &resolved.hyper, &resolved.optimizer)?;
    if !fit.converged {
        eprintln!(
            "warning: optimizer stopped at gradient norm {:.3e} after {} iterations",
            fit.gradient_norm, fit.iterations
        );
    }
    if fit.is_degenerate() {
        eprintln!("warning: shrinkage scale collapsed to {:.3e}; no interior maximum", fit.params.gamma);
    }

    let sha = resolved.sha256();
    let prov = Provenance::new("fit", Some(resolved.optimizer.seed), &sha);
    ensure_dir(out)?;
    let run_ids = data.observation_run_ids();

    let mut table = Table::new(["run_id", "n", "fitted_flux", "mean_reading", "residual"]);
    for ((o, &flux), id) in data.observations.iter().zip(&fit.fitted_fluxes).zip(&run_ids) {
        let mean = fit.mean_reading(flux);
        table.push(vec![id.to_string(), fmt_f64(o.n), fmt_f64(flux), fmt_f64(mean), fmt_f64(o.n - mean)]);
    }
    table.write(&out.join("residuals.csv"), &prov)?;

    let body = FitFile {
        mode: resolved.mode,
        config_sha256: sha,
        hyperparams: resolved.hyper,
        fit,
        run_ids,
    };
    write_json(&out.join("fit.json"), &prov, &body)
}
