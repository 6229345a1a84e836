use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{EstimatorProblem, LabError};
use crate::estimators::{EstimatorError, EstimatorKind, Lambda};

pub const MIN_REPLICATES: usize = 100;
/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

/// Sampling distribution of one estimator at one λ.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicateStats {
    pub estimator: String,
    pub lambda: f64,
    pub mean: f64,
    pub ideal: f64,
    pub bias: f64,
    pub variance: f64,
    /// 95% half-width of the mean (and therefore of the bias).
    pub ci_halfwidth: f64,
    /// 95% half-width of the variance estimate, from the fourth central moment.
    pub variance_ci_halfwidth: f64,
    /// Replicates where the estimator was defined.
    pub replicates: usize,
    /// Replicates skipped because the estimator was undefined.
    pub skipped: usize,
    pub clamp_events: usize,
}

impl ReplicateStats {
    pub fn variance_interval(&self) -> (f64, f64) {
        (self.variance - self.variance_ci_halfwidth, self.variance + self.variance_ci_halfwidth)
    }
}

/// Deterministic per-replicate generator: one ChaCha stream per replicate
/// under the master seed.
pub fn replicate_rng(master_seed: u64, replicate: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(replicate as u64);
    rng
}

fn summarise(values: &[f64]) -> (f64, f64, f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let m2 = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>();
    let m4 = values.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / n;
    let var = m2 / (n - 1.0);
    let ci = Z95 * (var / n).sqrt();
    let var_ci = Z95 * ((m4 - (m2 / n).powi(2)).max(0.0) / n).sqrt();
    (mean, var, ci, var_ci)
}

/// Resamples the click pattern `replicates` times and summarises each
/// estimator value against the fixed-label ideal loss. Replicates run in
/// parallel; results are reduced in replicate order.
pub fn monte_carlo_stats(
    problem: &EstimatorProblem,
    estimator: EstimatorKind,
    lambdas: &[Lambda],
    replicates: usize,
    seed: u64,
) -> Result<Vec<ReplicateStats>, LabError> {
    if replicates < MIN_REPLICATES {
        return Err(LabError::TooFewReplicates {
            got: replicates,
            min: MIN_REPLICATES,
        });
    }
    let oracle = problem.oracle_batch();
    let ideal = problem.ideal();
    let clamp_events = oracle.clamp_events();

    let draws: Vec<Vec<Option<f64>>> = (0..replicates)
        .into_par_iter()
        .map(|k| -> Result<Vec<Option<f64>>, EstimatorError> {
            let mut rng = replicate_rng(seed, k);
            let clicks = problem.true_propensity.iter().map(|&p| rng.random::<f64>() < p).collect();
            let batch = oracle.with_observed(clicks)?;
            lambdas
                .iter()
                .map(|&l| match estimator.evaluate(&batch, l) {
                    Ok(v) => Ok(Some(v)),
                    Err(EstimatorError::NoObserved) => Ok(None),
                    Err(e) => Err(e),
                })
                .collect()
        })
        .collect::<Result<_, _>>()?;

    Ok(lambdas
        .iter()
        .enumerate()
        .map(|(j, l)| {
            let values: Vec<f64> = draws.iter().filter_map(|d| d[j]).collect();
            let skipped = replicates - values.len();
            let (mean, variance, ci, var_ci) = if values.len() >= 2 {
                summarise(&values)
            } else {
                (f64::NAN, f64::NAN, f64::NAN, f64::NAN)
            };
            ReplicateStats {
                estimator: estimator.name().to_string(),
                lambda: l.get(),
                mean,
                ideal,
                bias: mean - ideal,
                variance,
                ci_halfwidth: ci,
                variance_ci_halfwidth: var_ci,
                replicates: values.len(),
                skipped,
                clamp_events,
            }
        })
        .collect())
}
