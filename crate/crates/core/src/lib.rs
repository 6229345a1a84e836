//! Counterfactual CVR estimation toolkit.
//!
//! * [`autodiff`]: tape-based reverse-mode differentiation over 2-D buffers.
//! * [`model`]: the exposure-guided embedding alignment network.
//! * [`estimators`]: naive, DR and parameter-varying DR losses, plus MMD.
//! * [`lab`]: synthetic worlds with exact enumeration and Monte-Carlo studies.
//! * [`data`]: schema, CSV IO and batching.
//! * [`train`]: two-stage training, evaluation and export.
//!
//! The numeric core is generic over the scalar; the aliases below cover the
//! common instantiations.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod data;
pub mod estimators;
pub mod lab;
pub mod model;
pub mod scalar;
pub mod train;

pub type Tensor64 = autodiff::Tensor<f64>;
pub type Tensor32 = autodiff::Tensor<f32>;
pub type Tape64 = autodiff::Tape<f64>;
pub type EstimatorBatch64 = estimators::EstimatorBatch<f64>;
/// Exact rational batch for enumeration checks.
pub type ExactEstimatorBatch = estimators::EstimatorBatch<num_rational::Rational64>;
