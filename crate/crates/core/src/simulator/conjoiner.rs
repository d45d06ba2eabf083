//! Synthetic two-beam data.
//!
//! One source is split into two beams. Each beam passes its own filter
//! wheel, then both pass a shared wheel before reaching the detector. A beam
//! setting is a pair (own filter, shared filter), so each beam has
//! `own * shared` settings; a run picks at most one setting per beam, with
//! the shared filter common to both.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::design::{Layout, Observation, RunDesign};
use crate::error::{invalid, Result};
use crate::estimator::eval_monomial;
use crate::model::compose_unchecked;
use crate::seed::{rng_for, streams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConjoinerSpec {
    /// Flux of each beam with every filter open.
    pub beam_flux: [f64; 2],
    /// Own-wheel transmissions of each beam.
    pub own_filters: [Vec<f64>; 2],
    pub shared_filters: Vec<f64>,
    /// Monomial coefficients of the mean reading as a function of flux.
    pub response: Vec<f64>,
    /// Relative noise scale above the knee.
    pub sigma: f64,
    pub kappa0: f64,
    /// Readings taken per configuration.
    pub repeats: usize,
    pub seed: u64,
}

impl Default for ConjoinerSpec {
    fn default() -> Self {
        ConjoinerSpec {
            beam_flux: [0.52, 0.48],
            own_filters: [vec![1.0, 0.55, 0.3], vec![1.0, 0.57, 0.31]],
            shared_filters: vec![1.0, 0.35, 0.1, 0.03],
            response: vec![0.0005, 1.0, -0.008, 0.002],
            sigma: 1e-4,
            kappa0: 0.2,
            repeats: 20,
            seed: 0,
        }
    }
}

impl ConjoinerSpec {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: &[f64]| !v.is_empty() && v.iter().all(|&t| t > 0.0 && t.is_finite());
        if !positive(&self.beam_flux) || !positive(&self.own_filters[0]) || !positive(&self.own_filters[1]) {
            return invalid("beam fluxes and filter transmissions must be positive");
        }
        if !positive(&self.shared_filters) {
            return invalid("shared filter transmissions must be positive");
        }
        if self.response.len() < 2 || !(self.response[1] > 0.0) {
            return invalid("response needs a positive linear coefficient");
        }
        if !(self.sigma >= 0.0) || !(self.kappa0 > 0.0 && self.kappa0 <= 1.0) {
            return invalid("sigma must be non-negative and kappa0 in (0, 1]");
        }
        if self.repeats == 0 {
            return invalid("repeats must be positive");
        }
        Ok(())
    }

    fn settings(&self, beam: usize) -> usize {
        self.own_filters[beam].len() * self.shared_filters.len()
    }

    /// Setting fluxes, beam 1 then beam 2. Setting `(a, c)` of a beam has
    /// index `c * own + a`.
    pub fn setting_fluxes(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.settings(0) + self.settings(1));
        for beam in 0..2 {
            for &shared in &self.shared_filters {
                for &own in &self.own_filters[beam] {
                    out.push(self.beam_flux[beam] * own * shared);
                }
            }
        }
        out
    }

    /// Scale of the flux axis: the sum of every setting flux.
    pub fn phi_max(&self) -> f64 {
        self.setting_fluxes().iter().sum()
    }

    /// Flux of the brightest run: both beams at their most open setting.
    pub fn max_run_flux(&self) -> f64 {
        let open = |v: &[f64]| v.iter().cloned().fold(0.0, f64::max);
        let shared = open(&self.shared_filters);
        (0..2).map(|b| self.beam_flux[b] * open(&self.own_filters[b]) * shared).sum()
    }

    /// All combinations of (beam-1 filter or blocked, beam-2 filter or
    /// blocked) under every shared filter, one row each.
    pub fn build_design(&self) -> RunDesign {
        let (j1, j2) = (self.settings(0), self.settings(1));
        let layout = Layout::Conjoiner { beam1: j1, beam2: j2 };
        let (own1, own2) = (self.own_filters[0].len(), self.own_filters[1].len());
        let mut rows = Vec::new();
        for c in 0..self.shared_filters.len() {
            for a in 0..=own1 {
                for b in 0..=own2 {
                    let mut x1 = vec![0u8; j1];
                    let mut x2 = vec![0u8; j2];
                    if a < own1 {
                        x1[c * own1 + a] = 1;
                    }
                    if b < own2 {
                        x2[c * own2 + b] = 1;
                    }
                    rows.push(layout.row_from_indicators(&x1, &x2).expect("valid by construction"));
                }
            }
        }
        RunDesign { layout, rows }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConjoinerTruth {
    pub seed: u64,
    pub phi: Vec<f64>,
    pub phi_max: f64,
    pub response: Vec<f64>,
    pub sigma: f64,
    pub kappa0: f64,
    /// Flux of each observation.
    pub run_flux: Vec<f64>,
    /// Noise-free reading of each observation.
    pub clean_reading: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConjoinerDataset {
    pub design: RunDesign,
    pub observations: Vec<Observation>,
    pub truth: ConjoinerTruth,
}

/// Draws one two-beam dataset. Noise has standard deviation `sigma * Phi`
/// above `kappa0 * phi_max` and `sigma * kappa0 * phi_max` below it.
pub fn simulate_conjoiner(spec: &ConjoinerSpec) -> Result<ConjoinerDataset> {
    spec.validate()?;
    let design = spec.build_design();
    let phi = spec.setting_fluxes();
    let phi_max = spec.phi_max();
    let knee = spec.kappa0 * phi_max;
    let mut rng = rng_for(spec.seed, streams::DATASET, 100);

    let mut observations = Vec::with_capacity(design.len() * spec.repeats);
    let mut run_flux = Vec::with_capacity(observations.capacity());
    let mut clean_reading = Vec::with_capacity(observations.capacity());
    for _ in 0..spec.repeats {
        for (i, row) in design.rows.iter().enumerate() {
            let flux = compose_unchecked(row, &phi, &[]);
            let clean = eval_monomial(&spec.response, flux);
            let z: f64 = rng.sample(StandardNormal);
            let sd = spec.sigma * flux.max(knee);
            observations.push(Observation {
                run_index: i,
                n: clean + sd * z,
            });
            run_flux.push(flux);
            clean_reading.push(clean);
        }
    }
    Ok(ConjoinerDataset {
        design,
        observations,
        truth: ConjoinerTruth {
            seed: spec.seed,
            phi,
            phi_max,
            response: spec.response.clone(),
            sigma: spec.sigma,
            kappa0: spec.kappa0,
            run_flux,
            clean_reading,
        },
    })
}
