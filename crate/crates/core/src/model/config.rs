use serde::{Deserialize, Serialize};

use super::ModelError;

/// Switches for the three ablated variants.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablation {
    /// Pretrain the shared table on the exposure task, then freeze it.
    pub exposure_network_on: bool,
    /// LoRA adapters plus EPNet/PPNet gates per task.
    pub task_personalized_network_on: bool,
    /// MMD alignment term in the CVR loss.
    pub metric_learning_on: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Self {
            exposure_network_on: true,
            task_personalized_network_on: true,
            metric_learning_on: true,
        }
    }
}

impl Ablation {
    pub fn without(name: &str) -> Option<Self> {
        let mut a = Self::default();
        match name {
            "without-EN" | "without-en" => a.exposure_network_on = false,
            "without-TPN" | "without-tpn" => a.task_personalized_network_on = false,
            "without-ML" | "without-ml" => a.metric_learning_on = false,
            "none" | "full" => {}
            _ => return None,
        }
        Some(a)
    }
}

/// Where the first tower layer's PPNet gate comes from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateSource {
    /// Every tower layer has its own gate network.
    #[default]
    Own,
    /// Layer 0 reuses the EPNet gate; deeper layers keep their own.
    Epnet,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub lora_rank: usize,
    /// Width of the learned per-task prior vector.
    pub prior_dim: usize,
    pub tower_hidden: Vec<usize>,
    pub exposure_hidden: Vec<usize>,
    pub imputation_hidden: usize,
    pub leaky_slope: f64,
    pub ppnet_gate_source: GateSource,
    pub ablation: Ablation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            embed_dim: 5,
            lora_rank: 2,
            prior_dim: 8,
            tower_hidden: vec![16, 8],
            exposure_hidden: vec![16],
            imputation_hidden: 8,
            leaky_slope: 0.2,
            ppnet_gate_source: GateSource::Own,
            ablation: Ablation::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::InvalidConfig(m.to_string()));
        if self.embed_dim == 0 || self.prior_dim == 0 || self.imputation_hidden == 0 {
            return bad("embed_dim, prior_dim and imputation_hidden must be positive");
        }
        if self.tower_hidden.is_empty() {
            return bad("tower_hidden needs at least one layer");
        }
        if self.tower_hidden.iter().chain(&self.exposure_hidden).any(|&w| w == 0) {
            return bad("layer widths must be positive");
        }
        if self.ablation.task_personalized_network_on && (self.lora_rank == 0 || 2 * self.lora_rank > self.embed_dim) {
            return bad("lora_rank must satisfy 1 <= r <= embed_dim / 2");
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            return bad("leaky_slope must lie in (0, 1)");
        }
        Ok(())
    }
}
