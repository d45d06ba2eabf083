use std::path::Path;

use fluxcal::simulator::{evaluate_scenario, ScenarioSpec};

use crate::config;
use crate::error::CliError;
use crate::output::{ensure_dir, fmt_f64, write_json, Provenance, Table};

/// Writes `evaluation.csv` (bias, coverage and width per parameter) and
/// `evaluation.json` with the per-dataset estimates.
pub fn run(
    scenario: u8,
    datasets: usize,
    replicates: usize,
    seed: u64,
    config_path: Option<&Path>,
    out: &Path,
) -> Result<(), CliError> {
    let resolved = config::load(config_path, None)?;
    let spec = resolved.scenario.apply(ScenarioSpec::new(scenario, seed)?);
    let report = evaluate_scenario(&spec, datasets, replicates, resolved.level, &resolved.optimizer)?;
    if !report.dropped.is_empty() {
        eprintln!("warning: {} datasets failed and were dropped", report.dropped.len());
    }

    let prov = Provenance::new("evaluate", Some(seed), &resolved.sha256());
    ensure_dir(out)?;
    let mut table = Table::new(["name", "truth", "relative_bias", "coverage", "mean_width"]);
    for p in &report.parameters {
        table.push(vec![
            p.name.clone(),
            fmt_f64(p.truth),
            fmt_f64(p.relative_bias),
            fmt_f64(p.coverage),
            fmt_f64(p.mean_width),
        ]);
    }
    table.write(&out.join("evaluation.csv"), &prov)?;
    write_json(&out.join("evaluation.json"), &prov, &report)
}
