use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{LabError, SyntheticWorld};
use crate::estimators::{ce_delta, EstimatorBatch};

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x.clamp(-30.0, 30.0)).exp())
}

/// How the fixed predictions fed to the estimators are derived from a world.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProblemSpec {
    /// `r̂ = σ(temperature * cvr_logit + offset)`.
    pub predictor_temperature: f64,
    pub predictor_offset: f64,
    /// `p̂ = min(1, propensity_scale * p)`; 1 means true propensities.
    pub propensity_scale: f64,
    /// `ê = imputation_scale * E_q[δ(r, r̂)]`.
    pub imputation_scale: f64,
    /// Seed for the single draw of oracle conversion labels.
    pub label_seed: u64,
}

impl Default for ProblemSpec {
    fn default() -> Self {
        Self {
            predictor_temperature: 0.5,
            predictor_offset: 0.0,
            propensity_scale: 1.0,
            imputation_scale: 1.0,
            label_seed: 0,
        }
    }
}

/// Fixed predictions, propensities and oracle labels over one world; the
/// only remaining randomness is the click pattern.
#[derive(Clone, Debug, PartialEq)]
pub struct EstimatorProblem {
    pub true_propensity: Vec<f64>,
    pub propensity_estimate: Vec<f64>,
    pub conversion_prob: Vec<f64>,
    pub predicted: Vec<f64>,
    pub labels: Vec<bool>,
    pub imputed: Vec<f64>,
}

impl EstimatorProblem {
    pub fn from_world(world: &SyntheticWorld, spec: &ProblemSpec) -> Result<Self, LabError> {
        if !(spec.propensity_scale > 0.0) || !(spec.imputation_scale >= 0.0) {
            return Err(LabError::InvalidSpec(
                "propensity_scale must be positive and imputation_scale non-negative".into(),
            ));
        }
        let predicted: Vec<f64> = world
            .cvr_logit()
            .iter()
            .map(|&z| sigmoid(spec.predictor_temperature * z + spec.predictor_offset))
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(spec.label_seed);
        let labels = world.conversion_prob().iter().map(|&q| rng.random::<f64>() < q).collect();
        let imputed = world
            .conversion_prob()
            .iter()
            .zip(&predicted)
            .map(|(&q, &r)| spec.imputation_scale * (q * ce_delta(true, r) + (1.0 - q) * ce_delta(false, r)))
            .collect();
        Ok(Self {
            true_propensity: world.propensity().to_vec(),
            propensity_estimate: world
                .propensity()
                .iter()
                .map(|&p| (spec.propensity_scale * p).min(1.0))
                .collect(),
            conversion_prob: world.conversion_prob().to_vec(),
            predicted,
            labels,
            imputed,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Realised errors for the fixed oracle labels.
    pub fn errors(&self) -> Vec<f64> {
        self.labels.iter().zip(&self.predicted).map(|(&r, &p)| ce_delta(r, p)).collect()
    }

    /// Errors every pair would have if its label were `label`.
    pub fn errors_if(&self, label: bool) -> Vec<f64> {
        self.predicted.iter().map(|&p| ce_delta(label, p)).collect()
    }

    /// Batch carrying errors on every pair and an all-unobserved pattern.
    pub fn oracle_batch(&self) -> EstimatorBatch<f64> {
        EstimatorBatch::new(
            vec![false; self.len()],
            self.propensity_estimate.clone(),
            self.errors().into_iter().map(Some).collect(),
            Some(self.imputed.clone()),
        )
        .expect("problem vectors are aligned")
    }

    pub fn ideal(&self) -> f64 {
        self.errors().iter().sum::<f64>() / self.len() as f64
    }
}
