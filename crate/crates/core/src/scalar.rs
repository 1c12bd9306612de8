//! Generic scalar abstraction and special functions.
//!
//! All closed-form coefficients in this crate are ordinary floating-point
//! arithmetic plus `ln Γ`; everything is written against the [`Real`] trait so
//! the kernel works for `f32` and `f64` alike. The concrete aliases live at
//! the crate root.

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};
use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::AddAssign;

/// Scalar type the mixture kernel is generic over.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + Sum
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Shorthand for lossless-enough conversion of small constants.
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("constant conversion")
    }

    /// Conversion from lattice indices and counts.
    fn of_usize(n: usize) -> Self {
        Self::from_usize(n).expect("usize conversion")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Natural log of the Gamma function for positive arguments.
///
/// Stirling's series after shifting the argument above 10. The Bernoulli
/// tail at z >= 10 is below 1e-16 relative, which the Beta-ratio cross-checks
/// at 1e-12 depend on (a Lanczos fit at ~1e-13 is not enough headroom).
pub fn ln_gamma<T: Real>(x: T) -> T {
    assert!(x > T::zero(), "ln_gamma requires a positive argument");
    // B_{2n} / (2n (2n-1)) for n = 1..=7
    const STIRLING: [f64; 7] = [
        1.0 / 12.0,
        -1.0 / 360.0,
        1.0 / 1260.0,
        -1.0 / 1680.0,
        1.0 / 1188.0,
        -691.0 / 360_360.0,
        7.0 / 1092.0,
    ];
    let ten = T::of(10.0);
    let mut z = x;
    let mut shift = T::zero();
    while z < ten {
        shift += z.ln();
        z = z + T::one();
    }
    let half = T::of(0.5);
    let mut series = T::zero();
    let z2 = z * z;
    let mut zpow = z;
    for &c in &STIRLING {
        series += T::of(c) / zpow;
        zpow = zpow * z2;
    }
    (z - half) * z.ln() - z + half * (T::TAU()).ln() + series - shift
}

/// ln B(a, b) = ln Γ(a) + ln Γ(b) - ln Γ(a+b).
pub fn ln_beta<T: Real>(a: T, b: T) -> T {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

/// ln n!
pub fn ln_factorial<T: Real>(n: usize) -> T {
    ln_gamma(T::of_usize(n) + T::one())
}

/// ln C(n, k); zero for the out-of-range corner cases callers never hit.
pub fn ln_binomial<T: Real>(n: usize, k: usize) -> T {
    debug_assert!(k <= n);
    ln_factorial::<T>(n) - ln_factorial::<T>(k) - ln_factorial::<T>(n - k)
}

/// Kahan compensated accumulator.
#[derive(Clone, Copy, Debug)]
pub struct KahanSum<T> {
    sum: T,
    carry: T,
}

impl<T: Real> Default for KahanSum<T> {
    fn default() -> Self {
        Self {
            sum: T::zero(),
            carry: T::zero(),
        }
    }
}

impl<T: Real> KahanSum<T> {
    pub fn add(&mut self, x: T) {
        let y = x - self.carry;
        let t = self.sum + y;
        self.carry = (t - self.sum) - y;
        self.sum = t;
    }

    pub fn value(&self) -> T {
        self.sum
    }
}
