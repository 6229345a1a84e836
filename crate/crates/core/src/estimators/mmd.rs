//! Squared maximum mean discrepancy (biased V-statistic) between two sample
//! sets, as a plain function and as a differentiable tape expression.

use serde::{Deserialize, Serialize};

use super::EstimatorError;
use crate::autodiff::{AutodiffError, Tape, Var};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bandwidth {
    Fixed(f64),
    /// Median pairwise Euclidean distance over the pooled sample.
    Median,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum KernelSpec {
    /// `exp(-‖x - y‖² / (2σ²))`
    Rbf { bandwidth: Bandwidth },
    /// `x · y`
    Linear,
}

impl Default for KernelSpec {
    fn default() -> Self {
        KernelSpec::Rbf {
            bandwidth: Bandwidth::Median,
        }
    }
}

impl KernelSpec {
    pub fn validate(&self) -> Result<(), EstimatorError> {
        match self {
            KernelSpec::Rbf {
                bandwidth: Bandwidth::Fixed(s),
            } if !(*s > 0.0 && s.is_finite()) => Err(EstimatorError::InvalidBandwidth(*s)),
            _ => Ok(()),
        }
    }
}

fn sq_dist<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + (x - y) * (x - y))
}

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

fn check_sets<T>(x: &[T], y: &[T], width: usize) -> Result<(), EstimatorError> {
    if width == 0 || x.is_empty() || y.is_empty() {
        return Err(EstimatorError::EmptySampleSet);
    }
    if !x.len().is_multiple_of(width) || !y.len().is_multiple_of(width) {
        return Err(EstimatorError::WidthMismatch);
    }
    Ok(())
}

/// Median pairwise distance over the pooled rows of `x` and `y`
/// (distinct pairs only). Falls back to 1 when every distance is zero.
pub fn median_bandwidth<T: Real>(x: &[T], y: &[T], width: usize) -> f64 {
    let rows: Vec<&[T]> = x.chunks(width).chain(y.chunks(width)).collect();
    let mut d: Vec<f64> = Vec::with_capacity(rows.len() * rows.len().saturating_sub(1) / 2);
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            d.push(sq_dist(rows[i], rows[j]).as_f64().sqrt());
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    let mid = d.len() / 2;
    let (_, m, _) = d.select_nth_unstable_by(mid, f64::total_cmp);
    if *m > 0.0 {
        *m
    } else {
        1.0
    }
}

fn resolve_sigma<T: Real>(kernel: &KernelSpec, x: &[T], y: &[T], width: usize) -> Option<f64> {
    match kernel {
        KernelSpec::Rbf { bandwidth } => Some(match bandwidth {
            Bandwidth::Fixed(s) => *s,
            Bandwidth::Median => median_bandwidth(x, y, width),
        }),
        KernelSpec::Linear => None,
    }
}

/// `mean k(X,X) + mean k(Y,Y) - 2 mean k(X,Y)` over row-major sample sets
/// of equal `width`.
pub fn mmd2<T: Real>(x: &[T], y: &[T], width: usize, kernel: &KernelSpec) -> Result<T, EstimatorError> {
    check_sets(x, y, width)?;
    kernel.validate()?;
    let sigma = resolve_sigma(kernel, x, y, width);
    let k = |a: &[T], b: &[T]| match sigma {
        Some(s) => (-sq_dist(a, b) / T::lit(2.0 * s * s)).exp(),
        None => dot(a, b),
    };
    let block_mean = |a: &[T], b: &[T]| {
        let mut total = T::zero();
        for ra in a.chunks(width) {
            for rb in b.chunks(width) {
                total = total + k(ra, rb);
            }
        }
        total / T::from_count((a.len() / width) * (b.len() / width))
    };
    Ok(block_mean(x, x) + block_mean(y, y) - T::lit(2.0) * block_mean(x, y))
}

fn kernel_block<T: Real>(tape: &mut Tape<T>, a: Var, b: Var, sigma: Option<f64>) -> Result<Var, AutodiffError> {
    let bt = tape.transpose(b);
    let cross = tape.matmul(a, bt)?;
    let Some(s) = sigma else {
        return Ok(tape.mean(cross));
    };
    let a2 = tape.mul(a, a)?;
    let an = tape.row_sums(a2);
    let b2 = tape.mul(b, b)?;
    let bn = tape.row_sums(b2);
    let bnt = tape.transpose(bn);
    let norms = tape.add(an, bnt)?;
    let twice = tape.scale(cross, T::lit(2.0));
    let d = tape.sub(norms, twice)?;
    let scaled = tape.scale(d, T::lit(-1.0 / (2.0 * s * s)));
    let kv = tape.exp(scaled);
    Ok(tape.mean(kv))
}

/// Differentiable MMD² between the rows of `x` and `y`. The median
/// bandwidth is computed from current values and held constant.
pub fn mmd2_tape<T: Real>(tape: &mut Tape<T>, x: Var, y: Var, kernel: &KernelSpec) -> Result<Var, EstimatorError> {
    kernel.validate()?;
    let ((_, wx), (_, wy)) = (tape.dims(x), tape.dims(y));
    if wx != wy {
        return Err(EstimatorError::WidthMismatch);
    }
    let sigma = resolve_sigma(kernel, tape.value(x), tape.value(y), wx);
    let kxx = kernel_block(tape, x, x, sigma)?;
    let kyy = kernel_block(tape, y, y, sigma)?;
    let kxy = kernel_block(tape, x, y, sigma)?;
    let s = tape.add(kxx, kyy)?;
    let kxy2 = tape.scale(kxy, T::lit(2.0));
    Ok(tape.sub(s, kxy2)?)
}
