//! Scalar abstraction shared by the tensor model, the diagram evaluator and
//! the Fock-space oracle.

use std::fmt::{Debug, Display};

use f128::f128;
use num_traits::{Float, FromPrimitive};

/// Real scalar the engine can run on.
///
/// Everything numeric in the crate is generic over this trait so that the
/// oracle can be rerun in quadruple precision when order extraction by
/// sampling needs more headroom than `f64` gives.
pub trait Scalar: Float + FromPrimitive + Debug + Display + Send + Sync + 'static {
    /// Conversion from `f64`. Exact for `f64` and wider types.
    ///
    fn of(x: f64) -> Self;

    /// Lossy conversion to `f64`, used for reporting.
    fn to_f64_lossy(self) -> f64;

    /// Relative round-off of one arithmetic operation.
    fn unit_roundoff() -> Self {
        Self::epsilon()
    }
}

impl Scalar for f32 {
    fn of(x: f64) -> Self {
        x as f32
    }

    fn to_f64_lossy(self) -> f64 {
        f64::from(self)
    }
}

impl Scalar for f64 {
    fn of(x: f64) -> Self {
        x
    }

    fn to_f64_lossy(self) -> f64 {
        self
    }
}

impl Scalar for f128 {
    fn of(x: f64) -> Self {
        f128::from(x)
    }

    fn to_f64_lossy(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }
}

/// IEEE binary128 scalar (113-bit mantissa, software emulated).
pub type Quad = f128;
