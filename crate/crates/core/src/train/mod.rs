//! Two-stage training (exposure pretraining, then cyclic multi-task
//! finetuning), AUC evaluation and embedding export.

mod config;
mod export;
mod metrics;
mod trainer;

pub use config::TrainConfig;
pub use export::export_embeddings;
pub use metrics::{auc, config_hash, content_hash, EpochTrace, Evaluation, LabelSource, MetricsReport, PretrainReport};
pub use trainer::{evaluate, finetune_and_evaluate, finetune_multitask, fit, pretrain_exposure, TrainData};

use std::io::Write;

use thiserror::Error;

use crate::autodiff::AutodiffError;
use crate::data::DataError;
use crate::estimators::EstimatorError;
use crate::model::ModelError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("non-finite loss in {stage} (epoch {epoch}, batch {batch}): {diagnostics}")]
    NonFinite {
        stage: &'static str,
        epoch: usize,
        batch: usize,
        diagnostics: String,
    },
    #[error("metric: {0}")]
    Metric(String),
    #[error("i/o: {0}")]
    Io(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

/// Writes per-epoch traces as CSV.
pub fn write_trace_csv<W: Write>(out: W, traces: &[EpochTrace]) -> Result<(), TrainError> {
    let mut w = csv::Writer::from_writer(out);
    for t in traces {
        w.serialize(t).map_err(|e| TrainError::Io(e.to_string()))?;
    }
    w.flush().map_err(|e| TrainError::Io(e.to_string()))
}
