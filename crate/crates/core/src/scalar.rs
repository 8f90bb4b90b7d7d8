//! Floating-point abstraction shared by every numeric routine in the crate.

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Real scalar the solver and networks are generic over: `f32` or `f64`.
pub trait Scalar: RealField + Copy + FromPrimitive + ToPrimitive + Send + Sync + 'static {}

impl<T> Scalar for T where T: RealField + Copy + FromPrimitive + ToPrimitive + Send + Sync + 'static {}

/// Converts an `f64` literal into the working scalar.
#[inline]
pub fn lit<T: Scalar>(v: f64) -> T {
    nalgebra::convert(v)
}

/// Lossy conversion back to `f64` for reporting and serialization.
#[inline]
pub fn to_f64<T: Scalar>(v: T) -> f64 {
    v.to_f64().unwrap_or(f64::NAN)
}

/// Numerically stable `ln(1 + e^z)`.
#[inline]
pub fn softplus<T: Scalar>(z: T) -> T {
    let zero = T::zero();
    z.max(zero) + (T::one() + (-z.abs()).exp()).ln()
}

/// Logistic sigmoid, the derivative of [`softplus`].
#[inline]
pub fn sigmoid<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}
