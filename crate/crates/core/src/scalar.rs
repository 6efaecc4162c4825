//! Scalar abstraction shared by the procedures and metrics.
//!
//! Everything that only compares and multiplies p-values is written against
//! [`Scalar`], so the same step-up code runs on `f32`, `f64` and exact
//! rationals. Monte Carlo generators are `f64` only.

use std::fmt::Debug;

use num_traits::{FromPrimitive, Num, ToPrimitive};

/// Real-number-like scalar: a field with a total order on the values we use.
pub trait Scalar:
    Num + Clone + Debug + PartialOrd + FromPrimitive + ToPrimitive + Send + Sync + 'static
{
    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count representable in scalar type")
    }

    fn to_f64_lossy(&self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl<T> Scalar for T where
    T: Num + Clone + Debug + PartialOrd + FromPrimitive + ToPrimitive + Send + Sync + 'static
{
}

pub(crate) fn max_of<T: Scalar>(a: T, b: T) -> T {
    if b > a {
        b
    } else {
        a
    }
}

pub(crate) fn min_of<T: Scalar>(a: T, b: T) -> T {
    if b < a {
        b
    } else {
        a
    }
}

/// Ascending order for values already known not to be NaN.
pub(crate) fn ascending<T: PartialOrd>(a: &T, b: &T) -> std::cmp::Ordering {
    a.partial_cmp(b).expect("unordered scalar")
}
