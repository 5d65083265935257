//! Scalar abstraction shared by every numerical routine in the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Floating point type the sampler can run on. Implemented for `f32` and `f64`.
///
/// Default tolerances are expressed through this trait so that they stay
/// meaningful at both precisions: they take the `f64` value used throughout
/// the crate, or a small multiple of machine epsilon when that is larger.
pub trait Real: RealField + Copy + Debug + Display + FromPrimitive + ToPrimitive + Sum + Send + Sync + 'static {
    /// Draws one standard normal variate.
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self;

    /// Draws one uniform variate on `[0, 1)`.
    fn unit_uniform<R: Rng + ?Sized>(rng: &mut R) -> Self;

    /// Lossless-enough conversion from an `f64` literal.
    #[inline]
    fn lit(value: f64) -> Self {
        nalgebra::convert(value)
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    #[inline]
    fn count(n: usize) -> Self {
        <Self as FromPrimitive>::from_usize(n).expect("usize fits in a float")
    }

    /// `max(value, factor * machine_epsilon)`.
    fn floor_tol(value: f64, factor: f64) -> Self {
        let eps = Self::default_epsilon().as_f64();
        Self::lit(value.max(factor * eps))
    }
}

impl Real for f64 {
    #[inline]
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        StandardNormal.sample(rng)
    }

    #[inline]
    fn unit_uniform<R: Rng + ?Sized>(rng: &mut R) -> Self {
        rng.random::<f64>()
    }
}

impl Real for f32 {
    #[inline]
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        StandardNormal.sample(rng)
    }

    #[inline]
    fn unit_uniform<R: Rng + ?Sized>(rng: &mut R) -> Self {
        rng.random::<f32>()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tolerance_floor_tracks_precision() {
        assert_eq!(<f64 as Real>::floor_tol(1e-10, 1e3), 1e-10);
        let t32 = <f32 as Real>::floor_tol(1e-10, 1e3);
        assert!(t32 > 1e-5 && t32 < 1e-3);
    }
}
