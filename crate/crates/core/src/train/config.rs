use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::autodiff::AdamConfig;
use crate::estimators::{EstimatorKind, KernelSpec, Lambda};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub pretrain_epochs: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub lambda: Lambda,
    /// Estimator used for the CVR loss.
    pub estimator: EstimatorKind,
    pub alpha_mmd: f64,
    pub gamma_steady: f64,
    pub w_ctr: f64,
    pub w_cvr: f64,
    pub w_imp: f64,
    pub kernel: KernelSpec,
    /// Rows per MMD sample set within a minibatch.
    pub mmd_sample: usize,
    /// Rows per MMD sample set in the per-epoch trace.
    pub mmd_eval_sample: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            pretrain_epochs: 5,
            epochs: 10,
            batch_size: 1024,
            learning_rate: 1e-3,
            weight_decay: 1e-3,
            lambda: Lambda::new(0.5).expect("valid"),
            estimator: EstimatorKind::Pvdr,
            alpha_mmd: 0.1,
            gamma_steady: 0.1,
            w_ctr: 1.0,
            w_cvr: 1.0,
            w_imp: 1.0,
            kernel: KernelSpec::default(),
            mmd_sample: 256,
            mmd_eval_sample: 512,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.to_string()));
        if self.batch_size < 2 {
            return bad("batch_size must be at least 2");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        let weights = [
            self.weight_decay,
            self.alpha_mmd,
            self.gamma_steady,
            self.w_ctr,
            self.w_cvr,
            self.w_imp,
        ];
        if weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return bad("weight decay and loss weights must be finite and non-negative");
        }
        if self.mmd_sample < 1 || self.mmd_eval_sample < 1 {
            return bad("MMD sample sizes must be positive");
        }
        self.kernel.validate().map_err(|e| TrainError::InvalidConfig(e.to_string()))?;
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.learning_rate,
            weight_decay: self.weight_decay,
            ..AdamConfig::default()
        }
    }
}
