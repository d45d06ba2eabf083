use std::path::Path;

use fluxcal::calibration::{apply_calibration, calibrate, CalibrationRef, CalibrationResult};
use serde::Serialize;

use super::bootstrap::EnsembleFile;
use super::{read_json, spread, FitFile};
use crate::error::{input, CliError};
use crate::output::{ensure_dir, fmt_f64, write_json, Provenance, Table};

const DEFAULT_GRID: usize = 101;

fn grid(range: (f64, f64), points: usize) -> Vec<f64> {
    let (lo, hi) = range;
    match points {
        1 => vec![lo],
        _ => (0..points).map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64).collect(),
    }
}

fn readings_from_file(path: &Path) -> Result<Vec<f64>, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let col = reader
        .headers()
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?
        .iter()
        .position(|h| h == "n")
        .ok_or_else(|| CliError::MissingColumn("n".into()))?;
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        let v: f64 = record[col]
            .parse()
            .map_err(|_| CliError::Input(format!("{}: `{}` is not a number", path.display(), &record[col])))?;
        out.push(v);
    }
    Ok(out)
}

fn readings(eval_at: &str, result: &CalibrationResult) -> Result<Vec<f64>, CliError> {
    if eval_at == "grid" {
        return Ok(grid(result.reading_range, DEFAULT_GRID));
    }
    if let Some(n) = eval_at.strip_prefix("grid:") {
        return match n.parse::<usize>() {
            Ok(points) if points >= 1 => Ok(grid(result.reading_range, points)),
            _ => input(format!("--eval-at grid:N needs a positive N, got `{n}`")),
        };
    }
    readings_from_file(Path::new(eval_at))
}

#[derive(Serialize)]
struct CalibrationFile<'a> {
    config_sha256: &'a str,
    level: f64,
    rho_standard_error: f64,
    calibration: &'a CalibrationResult,
}

/// Writes `calibrated.csv`, the replicate deviation tables and
/// `calibration.json`.
pub fn run(
    fit_path: &Path,
    ensemble_path: &Path,
    phi_ref: f64,
    n_ref: f64,
    eval_at: &str,
    out: &Path,
) -> Result<(), CliError> {
    let fit: FitFile = read_json(fit_path)?;
    let ens: EnsembleFile = read_json(ensemble_path)?;
    if ens.hyperparams != fit.hyperparams {
        return input("the ensemble and the fit were computed under different hyperparameters");
    }
    let result = calibrate(&fit.fit, &ens.ensemble, CalibrationRef { phi_ref, n_ref })?;
    let values: Vec<_> = readings(eval_at, &result)?
        .into_iter()
        .map(|n| apply_calibration(&result, n))
        .collect();

    let prov = Provenance::new("calibrate", None, &fit.config_sha256);
    ensure_dir(out)?;
    let mut table = Table::new(["n", "phi_cal", "standard_error", "lower", "upper", "extrapolated"]);
    let reps: Vec<String> = (1..=result.replicate_betas.len()).map(|b| format!("rep_{b}")).collect();
    let header = || std::iter::once("phi_cal".to_string()).chain(reps.iter().cloned());
    let mut absolute = Table::new(header());
    let mut relative = Table::new(header());
    for v in &values {
        let (se, lo, hi) = spread(&v.replicates, ens.level)?;
        table.push(vec![
            fmt_f64(v.n),
            fmt_f64(v.phi_cal),
            fmt_f64(se),
            fmt_f64(lo),
            fmt_f64(hi),
            v.extrapolated.to_string(),
        ]);
        let row = |d: Vec<f64>| std::iter::once(fmt_f64(v.phi_cal)).chain(d.into_iter().map(fmt_f64)).collect();
        absolute.push(row(v.absolute_deviations()));
        relative.push(row(v.relative_deviations()));
    }
    table.write(&out.join("calibrated.csv"), &prov)?;
    absolute.write(&out.join("deviations_absolute.csv"), &prov)?;
    relative.write(&out.join("deviations_relative.csv"), &prov)?;

    let (rho_se, _, _) = spread(&result.rho_replicates, ens.level)?;
    let body = CalibrationFile {
        config_sha256: &fit.config_sha256,
        level: ens.level,
        rho_standard_error: rho_se,
        calibration: &result,
    };
    write_json(&out.join("calibration.json"), &prov, &body)
}
