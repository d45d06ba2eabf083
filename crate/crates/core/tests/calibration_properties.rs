use std::sync::OnceLock;

use fluxcal::bootstrap::{run_bootstrap, BootstrapConfig, BootstrapEnsemble};
use fluxcal::calibration::{
    apply_calibration, calibrate, fit_nonlinearity, flux_grid, legacy_ls_fit, legacy_nonlinearity, CalibrationRef,
};
use fluxcal::model::{compose_flux, ModelParams, NoiseModel};
use fluxcal::simulator::{build_design, simulate_conjoiner, simulate_dataset, simulation_hyperparams, ConjoinerSpec, ScenarioSpec};
use fluxcal::{fit_mle, FitResult, Hyperparams, Observation, OptimizerConfig, RunDesign};
use proptest::prelude::*;

fn fitted() -> &'static (FitResult, BootstrapEnsemble) {
    static CELL: OnceLock<(FitResult, BootstrapEnsemble)> = OnceLock::new();
    CELL.get_or_init(|| {
        let ds = simulate_dataset(&ScenarioSpec::new(1, 4).unwrap()).unwrap();
        let hyper = simulation_hyperparams();
        let opt = OptimizerConfig::default();
        let fit = fit_mle(&ds.observations, &ds.design, &hyper, &opt).unwrap();
        let config = BootstrapConfig {
            replicates: 20,
            master_seed: 1,
            ..Default::default()
        };
        let ens = run_bootstrap(&ds.observations, &ds.design, &hyper, &opt, &fit, &config).unwrap();
        (fit, ens)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn calibration_scales_with_the_reference_flux(
        c in 0.01f64..100.0,
        phi_ref in 0.2f64..0.9,
        n in 0.05f64..1.0,
    ) {
        let (fit, ens) = fitted();
        let n_ref = fit.mean_reading(phi_ref);
        let one = calibrate(fit, ens, CalibrationRef { phi_ref, n_ref }).unwrap();
        let scaled = calibrate(fit, ens, CalibrationRef { phi_ref: c * phi_ref, n_ref }).unwrap();
        let a = apply_calibration(&one, n);
        let b = apply_calibration(&scaled, n);
        prop_assert!((b.phi_cal - c * a.phi_cal).abs() <= 1e-12 * (c * a.phi_cal).abs().max(1e-300));
        for (x, y) in a.replicates.iter().zip(&b.replicates) {
            prop_assert!((y - c * x).abs() <= 1e-12 * (c * x).abs());
        }
    }
}

/// Readings equal to the composed flux: the identity response.
fn identity_data(design: &RunDesign) -> Vec<Observation> {
    let truth = ModelParams {
        phi: vec![1.0 / 7.0; 7],
        psi: vec![0.25, 0.5, 0.75],
        alpha: vec![0.5, 0.5],
        gamma: 1.0,
        sigma: 0.0,
    };
    design
        .rows
        .iter()
        .enumerate()
        .map(|(i, r)| Observation {
            run_index: i,
            n: compose_flux(r, &truth).unwrap(),
        })
        .collect()
}

#[test]
fn noiseless_identity_calibrates_to_itself() {
    let design = build_design();
    let obs = identity_data(&design);
    let hyper = simulation_hyperparams();
    let opt = OptimizerConfig::default();
    let fit = fit_mle(&obs, &design, &hyper, &opt).unwrap();
    let empty = BootstrapEnsemble {
        requested: 0,
        replicates: vec![],
        seeds: vec![],
        failures: 0,
        failed_seeds: vec![],
    };
    let result = calibrate(&fit, &empty, CalibrationRef { phi_ref: 0.5, n_ref: 0.5 }).unwrap();
    for n in flux_grid(1.0, 41).into_iter().skip(1) {
        let v = apply_calibration(&result, n);
        assert!((v.phi_cal - n).abs() < 1e-10, "{n}: {}", v.phi_cal);
    }
}

#[test]
fn legacy_fit_is_exact_on_noiseless_linear_data() {
    let design = build_design();
    let obs = identity_data(&design);
    let hyper = simulation_hyperparams();
    let legacy = legacy_ls_fit(&obs, &design, &hyper, &OptimizerConfig::default()).unwrap();
    assert!(legacy.objective.abs() < 1e-12, "objective {:e}", legacy.objective);
}

#[test]
fn legacy_departs_most_at_the_bright_end() {
    let spec = ConjoinerSpec::default().with_seed(1);
    let ds = simulate_conjoiner(&spec).unwrap();
    let opt = OptimizerConfig::default();
    let phi_max = spec.phi_max();
    // fitted at the degree of the simulated response
    let hyper = Hyperparams::new(phi_max)
        .with_tau(1e-6 * phi_max)
        .with_degree(3)
        .with_noise(NoiseModel::PiecewiseProportional, spec.kappa0);
    let fit = fit_mle(&ds.observations, &ds.design, &hyper, &opt).unwrap();
    let legacy_hyper = Hyperparams {
        phi_max: spec.max_run_flux(),
        ..hyper
    };
    let legacy = legacy_ls_fit(&ds.observations, &ds.design, &legacy_hyper, &opt).unwrap();
    let grid = flux_grid(legacy_hyper.phi_max, 101);
    let mle = fit_nonlinearity(&fit, &grid);
    let old = legacy_nonlinearity(&legacy, &grid).unwrap();
    let (at, _) = mle
        .iter()
        .zip(&old)
        .map(|(a, b)| (a - b).abs())
        .enumerate()
        .fold((0, f64::MIN), |best, (i, g)| if g > best.1 { (i, g) } else { best });
    assert!(grid[at] >= 0.9 * legacy_hyper.phi_max, "largest gap at flux {}", grid[at]);
}
