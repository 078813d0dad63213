//! Element types for the tensor stack.
//!
//! Everything numeric is generic over [`Scalar`], with two instantiations:
//! `f32` for training and rollouts, `f64` for gradient checks and oracle
//! suites (central finite differences are too noisy in f32).

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};

/// Floating-point element of a [`crate::tensor::Tensor`].
pub trait Scalar:
    Copy
    + Clone
    + Debug
    + PartialOrd
    + PartialEq
    + Send
    + Sync
    + Add<Output = Self>
    + AddAssign
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + 'static
{
    const ZERO: Self;
    const ONE: Self;

    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
    fn is_finite_val(self) -> bool;
    fn abs_val(self) -> Self;
    fn sqrt_val(self) -> Self;
    fn exp_val(self) -> Self;
    fn tanh_val(self) -> Self;

    /// Standard normal CDF, evaluated in f64 so both precisions share the
    /// exact Gaussian form of gelu.
    fn norm_cdf(self) -> Self {
        let x = self.to_f64();
        Self::from_f64(0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2)))
    }

    /// Standard normal PDF (f64 internally, as above).
    fn norm_pdf(self) -> Self {
        let x = self.to_f64();
        Self::from_f64((-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt())
    }
}

impl Scalar for f32 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;

    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn is_finite_val(self) -> bool {
        self.is_finite()
    }
    fn abs_val(self) -> Self {
        self.abs()
    }
    fn sqrt_val(self) -> Self {
        self.sqrt()
    }
    fn exp_val(self) -> Self {
        self.exp()
    }
    fn tanh_val(self) -> Self {
        self.tanh()
    }

    // Single-precision erf keeps gelu exact at working precision without
    // paying for the f64 round trip.
    fn norm_cdf(self) -> Self {
        0.5 * (1.0 + libm::erff(self / std::f32::consts::SQRT_2))
    }

    fn norm_pdf(self) -> Self {
        const INV_SQRT_TAU: f32 = 0.398_942_28;
        (-0.5 * self * self).exp() * INV_SQRT_TAU
    }
}

impl Scalar for f64 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;

    fn from_f64(x: f64) -> Self {
        x
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn is_finite_val(self) -> bool {
        self.is_finite()
    }
    fn abs_val(self) -> Self {
        self.abs()
    }
    fn sqrt_val(self) -> Self {
        self.sqrt()
    }
    fn exp_val(self) -> Self {
        self.exp()
    }
    fn tanh_val(self) -> Self {
        self.tanh()
    }
}
