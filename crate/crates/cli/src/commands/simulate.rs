use std::fs;
use std::path::Path;

use fluxcal::simulator::{
    dataset_seed, scenario_bootstrap_config, simulate_conjoiner, simulate_dataset, simulation_hyperparams, ScenarioSpec,
};
use serde_json::json;

use crate::config;
use crate::data::write_data;
use crate::error::CliError;
use crate::output::{ensure_dir, to_json_bytes, write_json, Provenance};

fn names(count: Option<usize>, index: usize) -> (String, String) {
    match count {
        None => ("data.csv".into(), "truth.json".into()),
        Some(_) => (format!("data_{:03}.csv", index + 1), format!("truth_{:03}.json", index + 1)),
    }
}

/// Writes `data*.csv`, `truth*.json` and a `fit_config.json` matching the
/// simulated setup.
pub fn run(
    scenario: Option<u8>,
    conjoiner: bool,
    seed: u64,
    out: &Path,
    datasets: Option<usize>,
    config_path: Option<&Path>,
) -> Result<(), CliError> {
    let resolved = config::load(config_path, None)?;
    let sha = resolved.sha256();
    if datasets == Some(0) {
        return crate::error::input("--datasets must be at least 1");
    }
    ensure_dir(out)?;
    let seeds: Vec<u64> = match datasets {
        None => vec![seed],
        Some(n) => (0..n).map(|i| dataset_seed(seed, i)).collect(),
    };

    let fit_config = if conjoiner {
        let spec = resolved.conjoiner.clone();
        for (i, &s) in seeds.iter().enumerate() {
            let ds = simulate_conjoiner(&spec.clone().with_seed(s))?;
            let prov = Provenance::new("simulate", Some(s), &sha);
            let (data_name, truth_name) = names(datasets, i);
            write_data(&out.join(data_name), &ds.design, &ds.observations, &prov)?;
            write_json(&out.join(truth_name), &prov, &ds.truth)?;
        }
        let phi_max = spec.phi_max();
        json!({
            "mode": "conjoiner",
            "phi_max": phi_max,
            "tau": 1e-6 * phi_max,
            "kappa0": spec.kappa0,
            "legacy_phi_max": spec.max_run_flux(),
        })
    } else {
        let id = scenario.ok_or_else(|| CliError::Input("--scenario or --conjoiner is required".into()))?;
        let spec = resolved.scenario.apply(ScenarioSpec::new(id, seed)?);
        for (i, &s) in seeds.iter().enumerate() {
            let ds = simulate_dataset(&spec.clone().with_seed(s))?;
            let prov = Provenance::new("simulate", Some(s), &sha);
            let (data_name, truth_name) = names(datasets, i);
            write_data(&out.join(data_name), &ds.design, &ds.observations, &prov)?;
            write_json(&out.join(truth_name), &prov, &ds.truth)?;
        }
        let hyper = simulation_hyperparams();
        let boot = scenario_bootstrap_config(&spec, resolved.bootstrap.replicates, resolved.bootstrap.master_seed);
        json!({
            "mode": "sphere",
            "phi_max": hyper.phi_max,
            "tau": hyper.tau,
            "degree": hyper.degree,
            "bootstrap": {
                "drift_mode": boot.drift_mode,
                "per_lamp_variance": boot.per_lamp_variance,
            },
        })
    };
    let path = out.join("fit_config.json");
    fs::write(&path, to_json_bytes(&fit_config)?).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}
