//! Floating-point abstraction shared by the numeric modules.
//!
//! Everything that touches embeddings or propagation is generic over
//! [`Scalar`], which is implemented for `f32` and `f64`. The crate root
//! exposes `f64` aliases for the common case.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, ToPrimitive};

pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + LinalgScalar
    + ScalarOperand
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from an `f64` literal.
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

pub(crate) fn dot<F: Scalar>(a: &[F], b: &[F]) -> F {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

pub(crate) fn l2_norm<F: Scalar>(a: &[F]) -> F {
    dot(a, a).sqrt()
}

/// Divides `v` by its L2 norm in place. Returns `false` for a zero or
/// non-finite norm, leaving `v` untouched. Vectors already within a few ulps
/// of unit norm are left as-is so that renormalizing is idempotent.
pub(crate) fn normalize_in_place<F: Scalar>(v: &mut [F]) -> bool {
    let norm = l2_norm(v);
    if !(norm > F::zero()) || !norm.is_finite() {
        return false;
    }
    if (norm - F::one()).abs() <= F::epsilon() * F::lit(4.0) {
        return true;
    }
    for x in v.iter_mut() {
        *x = *x / norm;
    }
    true
}

/// Descending comparison with NaN sorted last.
pub(crate) fn cmp_desc<F: Scalar>(a: F, b: F) -> std::cmp::Ordering {
    b.partial_cmp(&a).unwrap_or_else(|| a.is_nan().cmp(&b.is_nan()))
}
