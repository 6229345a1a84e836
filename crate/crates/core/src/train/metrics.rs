use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::TrainError;

/// Area under the ROC curve via average ranks; tied scores count 1/2.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64, TrainError> {
    if scores.len() != labels.len() {
        return Err(TrainError::Metric("scores and labels differ in length".into()));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(TrainError::Metric("AUC needs both positive and negative labels".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their average
        let avg = (i + j + 2) as f64 / 2.0;
        rank_sum += avg * order[i..=j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Hex SHA-256 of `bytes`.
pub fn content_hash(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hash of a value's canonical JSON form.
pub fn config_hash<S: Serialize>(value: &S) -> String {
    content_hash(&serde_json::to_vec(value).expect("config serialises"))
}

/// Full-data diagnostics after one epoch (epoch 0 is the untrained state).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochTrace {
    pub epoch: usize,
    /// Mean minibatch objective while training this epoch; absent at epoch 0.
    pub train_loss: Option<f64>,
    pub total_loss: f64,
    pub ctr_loss: f64,
    pub cvr_loss: f64,
    pub imputation_loss: f64,
    pub steady_state_residual: f64,
    pub mmd2: f64,
    pub clamp_events: usize,
}

/// Which labels the CVR AUC was computed against.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSource {
    /// Conversion labels on every exposure (synthetic oracle view).
    Oracle,
    /// Only clicked exposures carry labels; the AUC covers the click space.
    ClickSpace,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub cvr_auc: f64,
    pub cvr_auc_labels: LabelSource,
    pub cvr_auc_rows: usize,
    pub ctcvr_auc: f64,
    pub ctr_auc: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainReport {
    pub skipped: bool,
    pub epoch_losses: Vec<f64>,
    pub negatives: usize,
    pub skipped_negatives: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub seed: u64,
    pub config_hash: String,
    pub estimator: String,
    pub lambda: f64,
    pub evaluation: Evaluation,
    pub pretrain: Option<PretrainReport>,
    pub epochs: Vec<EpochTrace>,
    pub clamp_events: usize,
    pub trainable_parameters: Vec<String>,
    pub embedding_checksum_before: u64,
    pub embedding_checksum_after: u64,
}
