use super::{ce_delta, EstimatorError};
use crate::scalar::{Field, Real};

/// Floor applied to estimated propensities before any division.
pub const PROPENSITY_FLOOR: f64 = 1e-6;

/// Aligned per-pair inputs shared by every loss estimator.
///
/// `error[i]` is the realised loss `δ(r, r̂)` and must be present wherever
/// the pair was observed; oracle batches carry it everywhere. Propensities
/// below [`PROPENSITY_FLOOR`] are raised to it at construction and counted
/// in [`clamp_events`](Self::clamp_events).
#[derive(Clone, Debug, PartialEq)]
pub struct EstimatorBatch<T> {
    observed: Vec<bool>,
    propensity: Vec<T>,
    error: Vec<Option<T>>,
    imputed: Option<Vec<T>>,
    clamp_events: usize,
}

impl<T: Field> EstimatorBatch<T> {
    pub fn new(
        observed: Vec<bool>,
        propensity: Vec<T>,
        error: Vec<Option<T>>,
        imputed: Option<Vec<T>>,
    ) -> Result<Self, EstimatorError> {
        let n = observed.len();
        if n == 0 {
            return Err(EstimatorError::EmptyBatch);
        }
        let lens_ok = propensity.len() == n
            && error.len() == n
            && imputed.as_ref().is_none_or(|e| e.len() == n);
        if !lens_ok {
            return Err(EstimatorError::LengthMismatch);
        }
        if let Some(i) = (0..n).find(|&i| observed[i] && error[i].is_none()) {
            return Err(EstimatorError::MissingError { index: i });
        }
        let floor = T::lit(PROPENSITY_FLOOR);
        let mut clamp_events = 0;
        let propensity = propensity
            .into_iter()
            .map(|p| {
                // also catches NaN, for which both comparisons are false
                if p >= floor {
                    p
                } else {
                    clamp_events += 1;
                    floor
                }
            })
            .collect();
        Ok(Self {
            observed,
            propensity,
            error,
            imputed,
            clamp_events,
        })
    }

    pub fn len(&self) -> usize {
        self.observed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observed.is_empty()
    }

    pub fn observed(&self) -> &[bool] {
        &self.observed
    }

    pub fn propensity(&self) -> &[T] {
        &self.propensity
    }

    pub fn error(&self) -> &[Option<T>] {
        &self.error
    }

    pub fn imputed(&self) -> Option<&[T]> {
        self.imputed.as_deref()
    }

    pub fn clamp_events(&self) -> usize {
        self.clamp_events
    }

    pub fn observed_count(&self) -> usize {
        self.observed.iter().filter(|&&o| o).count()
    }

    /// Replaces the observation pattern, keeping everything else. Used by the
    /// enumeration and Monte-Carlo harnesses. Errors must be defined on the
    /// new observed set.
    pub fn with_observed(&self, observed: Vec<bool>) -> Result<Self, EstimatorError> {
        if observed.len() != self.len() {
            return Err(EstimatorError::LengthMismatch);
        }
        if let Some(i) = (0..self.len()).find(|&i| observed[i] && self.error[i].is_none()) {
            return Err(EstimatorError::MissingError { index: i });
        }
        Ok(Self {
            observed,
            ..self.clone()
        })
    }

    pub(crate) fn imputed_or_err(&self) -> Result<&[T], EstimatorError> {
        self.imputed.as_deref().ok_or(EstimatorError::MissingImputation)
    }

    /// Error on an observed pair; construction guarantees presence.
    pub(crate) fn observed_error(&self, i: usize) -> T {
        self.error[i].expect("error defined on observed pairs")
    }
}

impl<T: Real> EstimatorBatch<T> {
    /// Builds a batch from conversion labels and predicted CVR, computing the
    /// realised errors with [`ce_delta`]. `labels[i]` may be `None` where the
    /// pair is unobserved.
    pub fn from_labels(
        observed: Vec<bool>,
        propensity: Vec<T>,
        labels: &[Option<bool>],
        predicted: &[T],
        imputed: Option<Vec<T>>,
    ) -> Result<Self, EstimatorError> {
        if labels.len() != predicted.len() {
            return Err(EstimatorError::LengthMismatch);
        }
        let error = labels
            .iter()
            .zip(predicted)
            .map(|(r, &p)| r.map(|r| ce_delta(r, p)))
            .collect();
        Self::new(observed, propensity, error, imputed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_missing_error_on_observed_pair() {
        let r = EstimatorBatch::<f64>::new(vec![true, false], vec![0.5, 0.5], vec![None, None], None);
        assert_eq!(r, Err(EstimatorError::MissingError { index: 0 }));
    }

    #[test]
    fn rejects_ragged_and_empty_inputs() {
        assert_eq!(
            EstimatorBatch::<f64>::new(vec![], vec![], vec![], None),
            Err(EstimatorError::EmptyBatch)
        );
        assert_eq!(
            EstimatorBatch::<f64>::new(vec![true], vec![0.5, 0.5], vec![Some(0.1)], None),
            Err(EstimatorError::LengthMismatch)
        );
    }

    #[test]
    fn small_propensities_are_clamped_and_counted() {
        let b = EstimatorBatch::<f64>::new(
            vec![true, true, false],
            vec![1e-9, 0.3, f64::NAN],
            vec![Some(0.1), Some(0.2), None],
            None,
        )
        .unwrap();
        assert_eq!(b.clamp_events(), 2);
        assert_eq!(b.propensity(), &[PROPENSITY_FLOOR, 0.3, PROPENSITY_FLOOR]);
    }
}
