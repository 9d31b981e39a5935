//! Floating-point scalar abstraction shared by every numeric module.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_complex::Complex;
use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Real scalar the simulator is generic over: `f32` or `f64`.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Complementary error function.
    fn erfc(self) -> Self;

    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self;

    /// Uniform draw on `[0, 1)`.
    fn unit_uniform<R: Rng + ?Sized>(rng: &mut R) -> Self;

    /// Converts an `f64` literal. Panics only if the value is not representable,
    /// which cannot happen for finite literals and `f32`/`f64`.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("finite literal")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite scalar")
    }

    /// `1 - Φ(x)` for the standard normal distribution.
    #[inline]
    fn normal_sf(self) -> Self {
        Self::lit(0.5) * (self / Self::SQRT_2()).erfc()
    }

    /// Standard normal CDF `Φ(x)`.
    #[inline]
    fn normal_cdf(self) -> Self {
        Self::lit(0.5) * (-self / Self::SQRT_2()).erfc()
    }

    /// Circularly-symmetric complex Gaussian draw with the given variance.
    #[inline]
    fn complex_normal<R: Rng + ?Sized>(rng: &mut R, variance: Self) -> Complex<Self> {
        let s = (variance * Self::lit(0.5)).sqrt();
        Complex::new(s * Self::standard_normal(rng), s * Self::standard_normal(rng))
    }
}

impl Real for f64 {
    #[inline]
    fn erfc(self) -> Self {
        libm::erfc(self)
    }

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
    fn erfc(self) -> Self {
        libm::erfcf(self)
    }

    #[inline]
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        StandardNormal.sample(rng)
    }

    #[inline]
    fn unit_uniform<R: Rng + ?Sized>(rng: &mut R) -> Self {
        rng.random::<f32>()
    }
}

/// Linear power ratio to decibels.
pub fn to_db<T: Real>(x: T) -> T {
    T::lit(10.0) * x.log10()
}

/// Decibels to linear power ratio.
pub fn from_db<T: Real>(db: T) -> T {
    T::lit(10.0).powf(db / T::lit(10.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    // Φ(x) on a fixed grid, computed with mpmath at 50 significant digits.
    const PHI_REFERENCE: &[(f64, f64)] = &[
        (-8.0, 6.22096057427178e-16),
        (-6.0, 9.86587645037698e-10),
        (-4.0, 3.16712418331199e-05),
        (-3.0, 0.00134989803163009),
        (-2.0, 0.0227501319481792),
        (-1.0, 0.158655253931457),
        (-0.5, 0.308537538725987),
        (0.0, 0.5),
        (0.25, 0.598706325682924),
        (0.5, 0.691462461274013),
        (1.0, 0.841344746068543),
        (1.5957691216057308, 0.944729825138632),
        (2.0, 0.977249868051821),
        (3.0, 0.998650101968370),
        (5.0, 0.999999713348428),
    ];

    // 1 - Φ(x) in the far tail, where Φ itself has no relative precision left.
    const SF_REFERENCE: &[(f64, f64)] = &[
        (4.0, 3.16712418331199e-05),
        (6.0, 9.86587645037698e-10),
        (10.0, 7.61985302416053e-24),
    ];

    #[test]
    fn normal_cdf_matches_high_precision_reference() {
        for &(x, expected) in PHI_REFERENCE {
            let got = x.normal_cdf();
            assert!((got - expected).abs() < 1e-12, "Φ({x}) = {got}, expected {expected}");
        }
        for &(x, expected) in SF_REFERENCE {
            let got = x.normal_sf();
            assert!(((got - expected) / expected).abs() < 1e-12, "1-Φ({x}) = {got}");
        }
    }

    #[test]
    fn f32_cdf_is_close() {
        for &(x, expected) in PHI_REFERENCE {
            assert!(((x as f32).normal_cdf() as f64 - expected).abs() < 1e-6);
        }
    }

    #[test]
    fn complex_normal_has_half_variance_per_component() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 1_000_000;
        let (mut re2, mut im2) = (0.0, 0.0);
        for _ in 0..n {
            let z = f64::complex_normal(&mut rng, 1.0);
            re2 += z.re * z.re;
            im2 += z.im * z.im;
        }
        let (re2, im2) = (re2 / n as f64, im2 / n as f64);
        assert!((re2 - 0.5).abs() < 0.005, "{re2}");
        assert!((im2 - 0.5).abs() < 0.005, "{im2}");
    }

    #[test]
    fn db_round_trip() {
        assert!((to_db(from_db(-121.97_f64)) + 121.97).abs() < 1e-12);
        assert_eq!(from_db(0.0_f64), 1.0);
    }
}
