//! Synthetic missing-not-at-random worlds with known propensities and
//! conversion probabilities, plus exact and Monte-Carlo harnesses for
//! estimator bias and variance.

mod enumerate;
mod monte_carlo;
mod problem;
mod world;

use std::io::Write;

pub use enumerate::{
    exact_expected_loss, exact_expected_loss_marginal, pattern_probabilities, ExactExpectation,
    MAX_ENUMERATION_PAIRS, MAX_MARGINAL_PAIRS,
};
pub use monte_carlo::{monte_carlo_stats, replicate_rng, ReplicateStats, MIN_REPLICATES, Z95};
pub use problem::{EstimatorProblem, ProblemSpec};
pub use world::{
    generate_world, sample_observations, MaskedView, Observations, SyntheticWorld, WorldSpec, SEGMENT_BUCKETS,
};

use serde::Serialize;
use thiserror::Error;

use crate::estimators::EstimatorError;

#[derive(Debug, Error, PartialEq)]
pub enum LabError {
    #[error("invalid world spec: {0}")]
    InvalidSpec(String),
    #[error("{n} pairs exceeds the enumeration limit of {max}; use Monte-Carlo mode")]
    TooLarge { n: usize, max: usize },
    #[error("need at least {min} replicates, got {got}")]
    TooFewReplicates { got: usize, min: usize },
    #[error("probabilities must lie in [0, 1]")]
    InvalidProbability,
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
}

/// One row of a bias/variance study. Exact columns are empty when the study
/// ran in Monte-Carlo mode only, and vice versa.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StudyRow {
    pub estimator: String,
    pub lambda: f64,
    pub bias: Option<f64>,
    pub variance: Option<f64>,
    pub ci_halfwidth: Option<f64>,
    pub replicates: Option<usize>,
    pub clamp_events: usize,
    pub exact_expected: Option<f64>,
    pub exact_bias: Option<f64>,
    pub excluded_mass: Option<f64>,
}

impl StudyRow {
    pub fn from_stats(stats: &ReplicateStats) -> Self {
        Self {
            estimator: stats.estimator.clone(),
            lambda: stats.lambda,
            bias: Some(stats.bias),
            variance: Some(stats.variance),
            ci_halfwidth: Some(stats.ci_halfwidth),
            replicates: Some(stats.replicates),
            clamp_events: stats.clamp_events,
            exact_expected: None,
            exact_bias: None,
            excluded_mass: None,
        }
    }

    pub fn with_exact(mut self, exact: &ExactExpectation<f64>) -> Self {
        self.exact_expected = Some(exact.expected);
        self.exact_bias = Some(exact.bias);
        self.excluded_mass = Some(exact.excluded_mass);
        self
    }
}

/// Writes study rows as CSV with a header line.
pub fn write_study_csv<W: Write>(out: W, rows: &[StudyRow]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
