use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{AutodiffError, ParamId, ParamStore};
use crate::scalar::Real;

/// Adam hyperparameters. Weight decay is decoupled (applied to the
/// parameter directly, not folded into the gradient).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-3,
        }
    }
}

#[derive(Clone, Debug)]
struct Moments<T> {
    first: Vec<T>,
    second: Vec<T>,
}

/// Bias-corrected Adam over a fixed group of parameters.
#[derive(Clone, Debug)]
pub struct AdamState<T> {
    config: AdamConfig,
    step: u64,
    moments: BTreeMap<ParamId, Moments<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    /// Applies one update to every trainable parameter in `group` using the
    /// gradients currently stored on it. Frozen parameters are skipped.
    pub fn step(&mut self, store: &mut ParamStore<T>, group: &[ParamId]) -> Result<(), AutodiffError> {
        self.step += 1;
        let c = self.config;
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let (lr, eps, wd) = (T::lit(c.lr), T::lit(c.eps), T::lit(c.weight_decay));
        let t = i32::try_from(self.step).unwrap_or(i32::MAX);
        let bc1 = T::one() - b1.powi(t);
        let bc2 = T::one() - b2.powi(t);

        for &id in group {
            let tensor = store.get_mut(id);
            if !tensor.trainable() {
                continue;
            }
            let n = tensor.len();
            let m = self.moments.entry(id).or_insert_with(|| Moments {
                first: vec![T::zero(); n],
                second: vec![T::zero(); n],
            });
            if m.first.len() != n {
                return Err(AutodiffError::DataLength {
                    shape: tensor.shape().to_vec(),
                    len: m.first.len(),
                });
            }
            let grad = tensor.grad().expect("trainable tensors carry a gradient").to_vec();
            let data = tensor.data_mut();
            for i in 0..n {
                let g = grad[i];
                m.first[i] = b1 * m.first[i] + (T::one() - b1) * g;
                m.second[i] = b2 * m.second[i] + (T::one() - b2) * g * g;
                let mhat = m.first[i] / bc1;
                let vhat = m.second[i] / bc2;
                data[i] = data[i] - lr * (mhat / (vhat.sqrt() + eps) + wd * data[i]);
            }
        }
        Ok(())
    }
}
