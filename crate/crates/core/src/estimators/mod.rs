//! Loss estimators over partially observed conversion labels, plus the MMD
//! alignment loss.
//!
//! All functions are pure and generic over [`Field`](crate::scalar::Field),
//! so the worked examples can be checked in exact rational arithmetic.

mod batch;
mod loss;
mod mmd;

pub use batch::{EstimatorBatch, PROPENSITY_FLOOR};
pub use loss::{
    ce_delta, dr_loss, ideal_loss, imputation_mean, imputation_training_loss, naive_loss, pvdr_loss,
    steady_state, steady_state_residual, Lambda, SteadyState,
};
pub use mmd::{median_bandwidth, mmd2, mmd2_tape, Bandwidth, KernelSpec};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::AutodiffError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimatorError {
    #[error("estimator batch is empty")]
    EmptyBatch,
    #[error("estimator inputs have different lengths")]
    LengthMismatch,
    #[error("error value missing for pair {index}")]
    MissingError { index: usize },
    #[error("imputed errors required but not supplied")]
    MissingImputation,
    #[error("estimator undefined: no observed pairs")]
    NoObserved,
    #[error("imputed errors sum to zero; steady-state ratio undefined")]
    ZeroImputedMass,
    #[error("lambda must lie in [0, 1], got {0}")]
    InvalidLambda(f64),
    #[error("sample set is empty")]
    EmptySampleSet,
    #[error("sample sets have different feature widths")]
    WidthMismatch,
    #[error("kernel bandwidth must be positive, got {0}")]
    InvalidBandwidth(f64),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

/// Which loss estimator to evaluate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Naive,
    Pvdr,
    Dr,
}

impl EstimatorKind {
    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::Naive => "naive",
            EstimatorKind::Pvdr => "pvdr",
            EstimatorKind::Dr => "dr",
        }
    }

    /// Evaluates the estimator. `lambda` is ignored by the non-PVDR kinds.
    pub fn evaluate<T: crate::scalar::Field>(
        self,
        batch: &EstimatorBatch<T>,
        lambda: Lambda,
    ) -> Result<T, EstimatorError> {
        match self {
            EstimatorKind::Naive => naive_loss(batch),
            EstimatorKind::Pvdr => pvdr_loss(batch, lambda),
            EstimatorKind::Dr => dr_loss(batch),
        }
    }
}

impl std::str::FromStr for EstimatorKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "naive" => Ok(Self::Naive),
            "pvdr" => Ok(Self::Pvdr),
            "dr" => Ok(Self::Dr),
            other => Err(format!("unknown estimator `{other}` (expected naive, pvdr or dr)")),
        }
    }
}
