use serde::{Deserialize, Serialize};

use super::{EstimatorBatch, EstimatorError};
use crate::autodiff::PROB_EPS;
use crate::scalar::{Field, Real};

/// Interpolation weight between the `|D|` and `Σ o/p̂` denominators.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Lambda(f64);

impl Lambda {
    pub const ONE: Lambda = Lambda(1.0);
    pub const ZERO: Lambda = Lambda(0.0);

    pub fn new(value: f64) -> Result<Self, EstimatorError> {
        if (0.0..=1.0).contains(&value) {
            Ok(Self(value))
        } else {
            Err(EstimatorError::InvalidLambda(value))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for Lambda {
    type Error = EstimatorError;
    fn try_from(v: f64) -> Result<Self, Self::Error> {
        Lambda::new(v)
    }
}

impl From<Lambda> for f64 {
    fn from(l: Lambda) -> f64 {
        l.0
    }
}

/// Binary cross-entropy `-r ln r̂ - (1-r) ln(1-r̂)` with `r̂` clamped to
/// `[1e-12, 1 - 1e-12]`.
pub fn ce_delta<T: Real>(label: bool, predicted: T) -> T {
    let eps = T::lit(PROB_EPS);
    let p = predicted.max(eps).min(T::one() - eps);
    if label {
        -p.ln()
    } else {
        -(T::one() - p).ln()
    }
}

fn mean<T: Field>(values: impl Iterator<Item = T>, n: usize) -> T {
    values.fold(T::zero(), |a, v| a + v) / T::from_count(n)
}

/// Mean realised error over every pair. Needs errors on the full space.
pub fn ideal_loss<T: Field>(batch: &EstimatorBatch<T>) -> Result<T, EstimatorError> {
    let mut total = T::zero();
    for (i, e) in batch.error().iter().enumerate() {
        total = total + e.ok_or(EstimatorError::MissingError { index: i })?;
    }
    Ok(total / T::from_count(batch.len()))
}

/// Mean error over the observed pairs only.
pub fn naive_loss<T: Field>(batch: &EstimatorBatch<T>) -> Result<T, EstimatorError> {
    let clicked = batch.observed_count();
    if clicked == 0 {
        return Err(EstimatorError::NoObserved);
    }
    let obs = batch.observed();
    Ok(mean(
        (0..batch.len()).filter(|&i| obs[i]).map(|i| batch.observed_error(i)),
        clicked,
    ))
}

/// Numerator `Σ o e / p̂` and weight mass `Σ o / p̂`.
pub(crate) fn ips_terms<T: Field>(batch: &EstimatorBatch<T>) -> (T, T) {
    let (obs, p) = (batch.observed(), batch.propensity());
    let mut num = T::zero();
    let mut mass = T::zero();
    for i in (0..batch.len()).filter(|&i| obs[i]) {
        num = num + batch.observed_error(i) / p[i];
        mass = mass + T::one() / p[i];
    }
    (num, mass)
}

/// Parameter-varying DR loss:
/// `Σ(o e / p̂) / (λ |D| + (1 - λ) Σ(o / p̂))`.
///
/// `λ = 1` gives the plain inverse-propensity form and `λ = 0` the
/// self-normalised form.
pub fn pvdr_loss<T: Field>(batch: &EstimatorBatch<T>, lambda: Lambda) -> Result<T, EstimatorError> {
    let (num, mass) = ips_terms(batch);
    let l = T::lit(lambda.get());
    let denom = l * T::from_count(batch.len()) + (T::one() - l) * mass;
    if !(denom > T::zero()) {
        return Err(EstimatorError::NoObserved);
    }
    Ok(num / denom)
}

/// Normalisation ratios `A = Σ(o/p̂)/|D|` and `B = Σ(o ê/p̂)/Σ ê`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SteadyState<T> {
    pub a: T,
    pub b: T,
    pub residual: T,
}

/// `λ + (1 - λ) A - B`; zero exactly when the steady-state condition holds.
pub fn steady_state<T: Field>(batch: &EstimatorBatch<T>, lambda: Lambda) -> Result<SteadyState<T>, EstimatorError> {
    let imputed = batch.imputed_or_err()?;
    let (obs, p) = (batch.observed(), batch.propensity());
    let mut mass = T::zero();
    let mut weighted = T::zero();
    let mut total = T::zero();
    for i in 0..batch.len() {
        total = total + imputed[i];
        if obs[i] {
            mass = mass + T::one() / p[i];
            weighted = weighted + imputed[i] / p[i];
        }
    }
    if total == T::zero() {
        return Err(EstimatorError::ZeroImputedMass);
    }
    let a = mass / T::from_count(batch.len());
    let b = weighted / total;
    let l = T::lit(lambda.get());
    Ok(SteadyState {
        a,
        b,
        residual: l + (T::one() - l) * a - b,
    })
}

pub fn steady_state_residual<T: Field>(batch: &EstimatorBatch<T>, lambda: Lambda) -> Result<T, EstimatorError> {
    steady_state(batch, lambda).map(|s| s.residual)
}

/// Standard doubly robust reference: `(1/|D|) Σ [ê + o (e - ê) / p̂]`.
pub fn dr_loss<T: Field>(batch: &EstimatorBatch<T>) -> Result<T, EstimatorError> {
    let imputed = batch.imputed_or_err()?;
    let (obs, p) = (batch.observed(), batch.propensity());
    Ok(mean(
        (0..batch.len()).map(|i| {
            if obs[i] {
                imputed[i] + (batch.observed_error(i) - imputed[i]) / p[i]
            } else {
                imputed[i]
            }
        }),
        batch.len(),
    ))
}

/// Mean imputed error over all pairs. Diagnostic only: minimising it
/// directly would drive every `ê` to zero.
pub fn imputation_mean<T: Field>(batch: &EstimatorBatch<T>) -> Result<T, EstimatorError> {
    let imputed = batch.imputed_or_err()?;
    Ok(mean(imputed.iter().copied(), batch.len()))
}

/// Inverse-propensity weighted squared imputation error over observed
/// pairs, normalised by `|D|`. Zero when nothing is observed.
pub fn imputation_training_loss<T: Field>(batch: &EstimatorBatch<T>) -> Result<T, EstimatorError> {
    let imputed = batch.imputed_or_err()?;
    let (obs, p) = (batch.observed(), batch.propensity());
    Ok(mean(
        (0..batch.len()).filter(|&i| obs[i]).map(|i| {
            let d = imputed[i] - batch.observed_error(i);
            d * d / p[i]
        }),
        batch.len(),
    ))
}
