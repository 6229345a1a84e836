//! The EGEAN network: a shared embedding table pretrained on exposure,
//! per-task LoRA adapters, EPNet/PPNet gates, CTR/CVR towers and an
//! imputation head.

mod checkpoint;
mod config;
mod layers;
mod network;

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_HEADER};
pub use config::{Ablation, GateSource, ModelConfig};
pub use layers::{lora_effective_weight, Dense, GateNu, LoraAdapter, Mlp};
pub use network::{EgeanModel, ForwardPass, Predictions, Task, EMBEDDING_NAME};

use thiserror::Error;

use crate::autodiff::AutodiffError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("code buffer of length {len} is not {rows} rows of {fields} in-vocabulary fields")]
    Codes { len: usize, rows: usize, fields: usize },
    #[error("model was built without the exposure network")]
    NoExposureNetwork,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("i/o: {0}")]
    Io(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}
