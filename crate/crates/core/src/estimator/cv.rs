use std::collections::BTreeMap;
use std::ops::RangeInclusive;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{fit_mle, OptimizerConfig};
use crate::design::{Observation, RunDesign};
use crate::error::{invalid, Result};
use crate::model::{compose_unchecked, expected_reading, Hyperparams};
use crate::seed::{rng_for, streams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegreeScore {
    pub degree: usize,
    /// Held-out mean squared prediction error of the readings, per fold.
    pub fold_mses: Vec<f64>,
    pub mean_mse: f64,
}

impl DegreeScore {
    pub fn root_mean_mse(&self) -> f64 {
        self.mean_mse.sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub folds: usize,
    pub per_degree: Vec<DegreeScore>,
    /// Degree with the smallest mean MSE; ties go to the smaller degree.
    pub recommended_p: usize,
}

/// Assigns each distinct run to one of `k` folds by a seeded shuffle.
/// Repeated readings of one run always land in the same fold.
pub(crate) fn fold_assignment(observations: &[Observation], k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 {
        return invalid(format!("cross-validation needs at least 2 folds, got {k}"));
    }
    let mut runs: Vec<usize> = observations.iter().map(|o| o.run_index).collect();
    runs.sort_unstable();
    runs.dedup();
    if runs.len() < k {
        return invalid(format!(
            "{k} folds requested but only {} distinct runs: some folds would hold no runs",
            runs.len()
        ));
    }
    let mut rng = rng_for(seed, streams::CV_FOLDS, 0);
    runs.shuffle(&mut rng);
    let fold_of: BTreeMap<usize, usize> = runs.iter().enumerate().map(|(pos, &r)| (r, pos % k)).collect();
    Ok(observations.iter().map(|o| fold_of[&o.run_index]).collect())
}

/// K-fold cross-validation of the polynomial degree.
pub fn cross_validate(
    observations: &[Observation],
    design: &RunDesign,
    hyper: &Hyperparams,
    degrees: RangeInclusive<usize>,
    folds: usize,
    seed: u64,
    opt: &OptimizerConfig,
) -> Result<CvResult> {
    if degrees.is_empty() {
        return invalid("empty degree range");
    }
    let fold_of = fold_assignment(observations, folds, seed)?;

    let jobs: Vec<(usize, usize)> = degrees
        .clone()
        .flat_map(|p| (0..folds).map(move |f| (p, f)))
        .collect();
    let mses: Vec<Result<f64>> = jobs
        .par_iter()
        .map(|&(p, f)| {
            let train: Vec<Observation> = observations
                .iter()
                .zip(&fold_of)
                .filter(|(_, &g)| g != f)
                .map(|(o, _)| *o)
                .collect();
            let hyper_p = hyper.clone().with_degree(p);
            let fit = fit_mle(&train, design, &hyper_p, opt)?;
            let (mut sse, mut count) = (0.0, 0usize);
            for (o, _) in observations.iter().zip(&fold_of).filter(|(_, &g)| g == f) {
                let flux = compose_unchecked(&design.rows[o.run_index], &fit.params.phi, &fit.params.psi);
                let r = o.n - expected_reading(flux, &fit.params.alpha, hyper.phi_max);
                sse += r * r;
                count += 1;
            }
            Ok(sse / count as f64)
        })
        .collect();

    let mut per_degree = Vec::new();
    let mut it = mses.into_iter();
    for p in degrees {
        let fold_mses = it.by_ref().take(folds).collect::<Result<Vec<f64>>>()?;
        let mean_mse = fold_mses.iter().sum::<f64>() / folds as f64;
        per_degree.push(DegreeScore {
            degree: p,
            fold_mses,
            mean_mse,
        });
    }
    let recommended_p = per_degree
        .iter()
        .fold(None::<&DegreeScore>, |best, s| match best {
            Some(b) if b.mean_mse <= s.mean_mse => Some(b),
            _ => Some(s),
        })
        .map(|s| s.degree)
        .expect("non-empty degree range");

    Ok(CvResult {
        folds,
        per_degree,
        recommended_p,
    })
}
