//! Exact expectations over every click pattern (and optionally every label
//! pattern) by brute-force enumeration.
//!
//! Patterns where an estimator is undefined (no clicks for the naive or
//! λ = 0 forms) are skipped; the rest are renormalised and the skipped
//! probability mass is reported.

use serde::Serialize;

use super::LabError;
use crate::estimators::{ideal_loss, EstimatorBatch, EstimatorError, EstimatorKind, Lambda};
use crate::scalar::Field;

pub const MAX_ENUMERATION_PAIRS: usize = 20;
pub const MAX_MARGINAL_PAIRS: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ExactExpectation<T> {
    /// `E[estimator]`, conditioned on the estimator being defined.
    pub expected: T,
    /// Ideal loss (or its expectation over labels in the marginal form).
    pub ideal: T,
    /// `expected - ideal` (signed).
    pub bias: T,
    /// Probability of patterns where the estimator is undefined.
    pub excluded_mass: T,
}

fn check_probability<T: Field>(p: &[T]) -> Result<(), LabError> {
    if p.iter().any(|&v| !(v >= T::zero() && v <= T::one())) {
        return Err(LabError::InvalidProbability);
    }
    Ok(())
}

fn pattern_weight<T: Field>(p: &[T], mask: u32) -> T {
    p.iter().enumerate().fold(T::one(), |w, (i, &pi)| {
        if mask >> i & 1 == 1 {
            w * pi
        } else {
            w * (T::one() - pi)
        }
    })
}

fn mask_bits(mask: u32, n: usize) -> Vec<bool> {
    (0..n).map(|i| mask >> i & 1 == 1).collect()
}

/// Probability of every click pattern, indexed by bitmask.
pub fn pattern_probabilities<T: Field>(p: &[T]) -> Result<Vec<T>, LabError> {
    if p.len() > MAX_ENUMERATION_PAIRS {
        return Err(LabError::TooLarge {
            n: p.len(),
            max: MAX_ENUMERATION_PAIRS,
        });
    }
    check_probability(p)?;
    Ok((0..1u32 << p.len()).map(|m| pattern_weight(p, m)).collect())
}

/// `E_o[estimator]` with `o_i ~ Bernoulli(true_propensity_i)` and labels
/// held fixed. `oracle` must carry errors on every pair; its own
/// observation pattern is ignored.
pub fn exact_expected_loss<T: Field>(
    oracle: &EstimatorBatch<T>,
    true_propensity: &[T],
    estimator: EstimatorKind,
    lambda: Lambda,
) -> Result<ExactExpectation<T>, LabError> {
    let n = oracle.len();
    if true_propensity.len() != n {
        return Err(LabError::Estimator(EstimatorError::LengthMismatch));
    }
    let probs = pattern_probabilities(true_propensity)?;
    let ideal = ideal_loss(oracle)?;
    let mut acc = T::zero();
    let mut excluded = T::zero();
    for (mask, &w) in probs.iter().enumerate() {
        let batch = oracle.with_observed(mask_bits(mask as u32, n))?;
        match estimator.evaluate(&batch, lambda) {
            Ok(v) => acc = acc + w * v,
            Err(EstimatorError::NoObserved) => excluded = excluded + w,
            Err(e) => return Err(e.into()),
        }
    }
    let kept = T::one() - excluded;
    if !(kept > T::zero()) {
        return Err(LabError::Estimator(EstimatorError::NoObserved));
    }
    let expected = acc / kept;
    Ok(ExactExpectation {
        expected,
        ideal,
        bias: expected - ideal,
        excluded_mass: excluded,
    })
}

/// Additionally marginalises over labels `r_i ~ Bernoulli(conversion_prob_i)`.
/// `errors_if_zero[i]` / `errors_if_one[i]` are the losses of pair `i` under
/// each label. Undefined patterns are excluded jointly over `(r, o)`.
#[allow(clippy::too_many_arguments)]
pub fn exact_expected_loss_marginal<T: Field>(
    true_propensity: &[T],
    conversion_prob: &[T],
    propensity_estimate: &[T],
    errors_if_zero: &[T],
    errors_if_one: &[T],
    imputed: Option<&[T]>,
    estimator: EstimatorKind,
    lambda: Lambda,
) -> Result<ExactExpectation<T>, LabError> {
    let n = true_propensity.len();
    if n > MAX_MARGINAL_PAIRS {
        return Err(LabError::TooLarge {
            n,
            max: MAX_MARGINAL_PAIRS,
        });
    }
    let aligned = [conversion_prob.len(), propensity_estimate.len(), errors_if_zero.len(), errors_if_one.len()]
        .iter()
        .all(|&l| l == n)
        && imputed.is_none_or(|e| e.len() == n);
    if !aligned {
        return Err(LabError::Estimator(EstimatorError::LengthMismatch));
    }
    check_probability(conversion_prob)?;
    let label_probs = pattern_probabilities(conversion_prob)?;
    let click_probs = pattern_probabilities(true_propensity)?;

    let mut acc = T::zero();
    let mut excluded = T::zero();
    let mut ideal = T::zero();
    for (rmask, &wr) in label_probs.iter().enumerate() {
        let errors: Vec<Option<T>> = (0..n)
            .map(|i| {
                Some(if rmask >> i & 1 == 1 {
                    errors_if_one[i]
                } else {
                    errors_if_zero[i]
                })
            })
            .collect();
        let oracle = EstimatorBatch::new(
            vec![false; n],
            propensity_estimate.to_vec(),
            errors,
            imputed.map(<[T]>::to_vec),
        )?;
        ideal = ideal + wr * ideal_loss(&oracle)?;
        for (omask, &wo) in click_probs.iter().enumerate() {
            let w = wr * wo;
            let batch = oracle.with_observed(mask_bits(omask as u32, n))?;
            match estimator.evaluate(&batch, lambda) {
                Ok(v) => acc = acc + w * v,
                Err(EstimatorError::NoObserved) => excluded = excluded + w,
                Err(e) => return Err(e.into()),
            }
        }
    }
    let kept = T::one() - excluded;
    if !(kept > T::zero()) {
        return Err(LabError::Estimator(EstimatorError::NoObserved));
    }
    let expected = acc / kept;
    Ok(ExactExpectation {
        expected,
        ideal,
        bias: expected - ideal,
        excluded_mass: excluded,
    })
}
