pub mod bootstrap;
pub mod calibrate;
pub mod compare;
pub mod cv;
pub mod evaluate;
pub mod fit;
pub mod simulate;

use std::fs;
use std::path::Path;

use fluxcal::bootstrap::{percentile_interval, standard_error, MIN_PERCENTILE_VALUES};
use fluxcal::{FitResult, Hyperparams};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::{self, ModeArg, Resolved};
use crate::data::{read_data, DataSet};
use crate::error::CliError;

/// Body of `fit.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitFile {
    pub mode: ModeArg,
    pub config_sha256: String,
    pub hyperparams: Hyperparams,
    pub fit: FitResult,
    /// `run_id` of each observation, matching `fit.fitted_fluxes`.
    pub run_ids: Vec<u64>,
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

pub fn load_inputs(
    data: &Path,
    config: Option<&Path>,
    mode: Option<ModeArg>,
) -> Result<(Resolved, DataSet), CliError> {
    let resolved = config::load(config, mode)?;
    let data = read_data(data, resolved.mode)?;
    for w in data.design.warnings() {
        eprintln!("warning: {w}");
    }
    Ok((resolved, data))
}

/// Standard error and percentile interval, with NaN bounds when there are
/// too few values for percentiles.
pub fn spread(values: &[f64], level: f64) -> Result<(f64, f64, f64), CliError> {
    let se = if values.len() >= 2 { standard_error(values)? } else { f64::NAN };
    let (lo, hi) = if values.len() >= MIN_PERCENTILE_VALUES {
        percentile_interval(values, level)?
    } else {
        (f64::NAN, f64::NAN)
    };
    Ok((se, lo, hi))
}
