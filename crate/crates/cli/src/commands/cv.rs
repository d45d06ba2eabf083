use std::ops::RangeInclusive;
use std::path::Path;

use fluxcal::estimator::cross_validate;

use super::load_inputs;
use crate::config::ModeArg;
use crate::error::CliError;
use crate::output::{ensure_dir, fmt_f64, write_json, Provenance, Table};

/// Writes `cv.csv` (one row per degree and fold) and `cv.json`.
pub fn run(
    data: &Path,
    config: Option<&Path>,
    degrees: RangeInclusive<usize>,
    folds: usize,
    seed: u64,
    out: &Path,
    mode: Option<ModeArg>,
) -> Result<(), CliError> {
    let (resolved, data) = load_inputs(data, config, mode)?;
    let result = cross_validate(
        &data.observations,
        &data.design,
        &resolved.hyper,
        degrees,
        folds,
        seed,
        &resolved.optimizer,
    )?;

    let prov = Provenance::new("cv", Some(seed), &resolved.sha256());
    ensure_dir(out)?;
    let mut table = Table::new(["degree", "fold", "mse", "rmse"]);
    for score in &result.per_degree {
        for (k, &mse) in score.fold_mses.iter().enumerate() {
            table.push(vec![score.degree.to_string(), (k + 1).to_string(), fmt_f64(mse), fmt_f64(mse.sqrt())]);
        }
    }
    table.write(&out.join("cv.csv"), &prov)?;
    write_json(&out.join("cv.json"), &prov, &result)
}
