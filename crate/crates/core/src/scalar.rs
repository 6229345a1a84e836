//! Scalar abstractions shared by the numeric core.
//!
//! Estimator arithmetic only needs a field ([`Field`]), so it also runs on
//! exact rationals. Anything touching `exp`/`ln` needs [`Real`].

use std::fmt::Debug;

use num_traits::{Float, FromPrimitive, Num, ToPrimitive};

/// Ordered field with a lossy bridge to and from `f64`.
pub trait Field:
    Num + Copy + PartialOrd + FromPrimitive + ToPrimitive + Debug + Send + Sync + 'static
{
    /// Converts an `f64` constant. Panics only for non-representable values,
    /// which never happens for the finite literals used in this crate.
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("finite literal is representable")
    }

    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count is representable")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl<T> Field for T where
    T: Num + Copy + PartialOrd + FromPrimitive + ToPrimitive + Debug + Send + Sync + 'static
{
}

/// Floating-point scalar usable by the autodiff engine and model.
pub trait Real: Field + Float {}

impl<T> Real for T where T: Field + Float {}
