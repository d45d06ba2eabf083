use std::path::Path;

use fluxcal::bootstrap::run_bootstrap;
use fluxcal::calibration::{fit_nonlinearity, flux_grid, legacy_ls_fit, legacy_nonlinearity, Envelope, LegacyFit};
use fluxcal::{fit_mle, FitResult};
use serde::Serialize;

use super::load_inputs;
use crate::config::ModeArg;
use crate::error::{input, CliError};
use crate::output::{ensure_dir, fmt_f64, write_json, Provenance, Table};

#[derive(Serialize)]
struct CompareFile<'a> {
    config_sha256: &'a str,
    replicates: usize,
    replicate_failures: usize,
    mle: &'a FitResult,
    legacy: &'a LegacyFit,
    /// Grid indices where the legacy curve leaves the replicate envelope.
    excursions: Vec<usize>,
    within_envelope: bool,
    /// Flux and size of the largest gap between the two curves.
    largest_gap_flux: f64,
    largest_gap: f64,
}

/// Writes `curves.csv` (flux, mle, legacy, one column per replicate) and
/// `compare.json`.
#[allow(clippy::too_many_arguments)]
pub fn run(
    data: &Path,
    config: Option<&Path>,
    out: &Path,
    replicates: Option<usize>,
    seed: Option<u64>,
    points: usize,
    mode: Option<ModeArg>,
) -> Result<(), CliError> {
    if points < 2 {
        return input("--points must be at least 2");
    }
    let (mut resolved, data) = load_inputs(data, config, mode)?;
    if let Some(b) = replicates {
        resolved.bootstrap.replicates = b;
    }
    if let Some(s) = seed {
        resolved.bootstrap.master_seed = s;
    }
    resolved.bootstrap.validate()?;
    let (obs, design, opt) = (&data.observations, &data.design, &resolved.optimizer);

    let mle = fit_mle(obs, design, &resolved.hyper, opt)?;
    let legacy = legacy_ls_fit(obs, design, &resolved.legacy_hyper(), opt)?;
    if !legacy.converged {
        eprintln!("warning: legacy fit stopped after {} iterations without converging", legacy.iterations);
    }
    let ensemble = run_bootstrap(obs, design, &resolved.hyper, opt, &mle, &resolved.bootstrap)?;

    let grid = flux_grid(resolved.legacy_phi_max, points);
    let mle_curve = fit_nonlinearity(&mle, &grid);
    let legacy_curve = legacy_nonlinearity(&legacy, &grid)?;
    let rep_curves: Vec<Vec<f64>> = ensemble.replicates.iter().map(|r| fit_nonlinearity(r, &grid)).collect();
    let envelope = Envelope::of(&rep_curves)?;
    let excursions = envelope.excursions(&legacy_curve);
    let (gap_at, gap) = mle_curve
        .iter()
        .zip(&legacy_curve)
        .map(|(m, l)| l - m)
        .enumerate()
        .fold((0, 0.0_f64), |best, (i, d)| if d.abs() > best.1.abs() { (i, d) } else { best });

    let sha = resolved.sha256();
    let prov = Provenance::new("compare", Some(resolved.bootstrap.master_seed), &sha);
    ensure_dir(out)?;
    let header = ["flux", "mle", "legacy"]
        .map(String::from)
        .into_iter()
        .chain((1..=rep_curves.len()).map(|b| format!("rep_{b}")));
    let mut table = Table::new(header);
    for (i, &f) in grid.iter().enumerate() {
        let mut row = vec![fmt_f64(f), fmt_f64(mle_curve[i]), fmt_f64(legacy_curve[i])];
        row.extend(rep_curves.iter().map(|c| fmt_f64(c[i])));
        table.push(row);
    }
    table.write(&out.join("curves.csv"), &prov)?;

    let body = CompareFile {
        config_sha256: &sha,
        replicates: ensemble.replicates.len(),
        replicate_failures: ensemble.failures,
        mle: &FitResult {
            fitted_fluxes: Vec::new(),
            ..mle.clone()
        },
        legacy: &LegacyFit {
            fitted_fluxes: Vec::new(),
            ..legacy.clone()
        },
        within_envelope: excursions.is_empty(),
        excursions,
        largest_gap_flux: grid[gap_at],
        largest_gap: gap,
    };
    write_json(&out.join("compare.json"), &prov, &body)
}
