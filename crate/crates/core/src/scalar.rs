//! Floating-point abstraction shared by every numerical kernel in the crate.
//!
//! All mesh, basis, convolution and stepping code is written against
//! [`Scalar`] so the same solver can be monomorphized for `f32` or `f64`.
//! Configuration values and file formats stay in `f64`; they are converted
//! with [`Scalar::lit`] at the boundary.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign};

pub trait Scalar:
    Float + FromPrimitive + NumAssign + Copy + Debug + Display + Default + Send + Sync + Sum + 'static
{
    /// Relative pivot threshold below which a factorization is declared singular.
    const SINGULAR_PIVOT_REL: f64;

    /// Convert an `f64` literal or configuration value.
    fn lit(v: f64) -> Self;

    fn as_f64(self) -> f64;

    #[inline]
    fn count(n: usize) -> Self {
        Self::lit(n as f64)
    }

    #[inline]
    fn half() -> Self {
        Self::lit(0.5)
    }

    #[inline]
    fn two() -> Self {
        Self::lit(2.0)
    }

    #[inline]
    fn pi() -> Self {
        Self::lit(std::f64::consts::PI)
    }
}

impl Scalar for f64 {
    const SINGULAR_PIVOT_REL: f64 = 1e-14;

    #[inline]
    fn lit(v: f64) -> Self {
        v
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

impl Scalar for f32 {
    const SINGULAR_PIVOT_REL: f64 = 1e-6;

    #[inline]
    fn lit(v: f64) -> Self {
        v as f32
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

/// Wrap `x` into `[0, 1)`.
#[inline]
pub fn wrap_unit<S: Scalar>(x: S) -> S {
    let y = x - x.floor();
    // x slightly below an integer can round to exactly 1.0
    if y >= S::one() {
        S::zero()
    } else {
        y
    }
}

/// Torus distance on the unit circle, in `[0, 1/2]`.
#[inline]
pub fn torus_distance<S: Scalar>(x: S) -> S {
    let y = wrap_unit(x);
    y.min(S::one() - y)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wrap_handles_negative_and_large() {
        assert_eq!(wrap_unit(-0.25_f64), 0.75);
        assert_eq!(wrap_unit(3.5_f64), 0.5);
        assert_eq!(wrap_unit(-1e-20_f64), 0.0);
        assert!((wrap_unit(-0.1_f32) - 0.9).abs() < 1e-6);
    }

    #[test]
    fn torus_distance_is_even_and_bounded() {
        for &x in &[0.1_f64, 0.3, 0.5, 0.7, 0.9, -0.2] {
            let d = torus_distance(x);
            assert!((0.0..=0.5).contains(&d));
            assert!((d - torus_distance(-x)).abs() < 1e-15);
        }
        assert!((torus_distance(0.8_f64) - 0.2).abs() < 1e-15);
    }
}
