//! L-level uniform midrise quantizer and its Bussgang linearization.
//!
//! Inputs are normalized by an a-priori per-component standard deviation
//! before quantization, so the quantizer itself always sees (approximately)
//! unit-variance Gaussian samples. Under that model the Bussgang gain `α`
//! and the output/input power ratio `λ` have closed forms in the step size
//! `Δ` and the level count `L`:
//!
//! ```text
//! α(Δ, L) = Δ/√(2π) · (1 + 2 Σ_{l=1}^{L/2-1} exp(-l²Δ²/2))
//! λ(Δ, L) = Δ² · (1/4 + 4 Σ_{l=1}^{L/2-1} l·(1 - Φ(lΔ)))
//! ```
//!
//! and the quantizer output decomposes as `Q(x) = α·x + d` with `d`
//! uncorrelated to `x` and `E|d|² = (λ - α²)·E|x|²`.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QuantizerError {
    #[error("level count must be an even integer >= 2, got {0}")]
    InvalidLevels(u32),
    #[error("step size must be positive and finite, got {0}")]
    InvalidStep(f64),
    #[error("input must be finite, got {0}")]
    NonFiniteInput(f64),
    #[error("normalization scale must be positive and finite, got {0}")]
    InvalidScale(f64),
    #[error("input power must be nonnegative, got {0}")]
    NegativePower(f64),
    #[error("cannot parse level count {0:?}")]
    Parse(String),
}

/// Search interval for the SDNR-optimal step on normalized input.
pub const STEP_SEARCH_RANGE: (f64, f64) = (1e-3, 6.0);
/// Relative tolerance of the golden-section refinement.
pub const STEP_SEARCH_RTOL: f64 = 1e-6;

fn check_levels(levels: u32) -> Result<(), QuantizerError> {
    if levels < 2 || !levels.is_multiple_of(2) {
        return Err(QuantizerError::InvalidLevels(levels));
    }
    Ok(())
}

fn check_step<T: Real>(step: T) -> Result<(), QuantizerError> {
    if !(step.is_finite() && step > T::zero()) {
        return Err(QuantizerError::InvalidStep(step.as_f64()));
    }
    Ok(())
}

/// Uniform midrise quantizer on unit-variance (normalized) input.
///
/// Thresholds sit at `(l - L/2)·Δ` for `l = 1..L-1`; the reconstruction of
/// cell `l` is its midpoint `(l - (L-1)/2)·Δ`. Cells are half-open on the
/// left, `(t_l, t_{l+1}]`, so an input exactly on a threshold falls in the
/// lower cell. The two end cells extend to ±∞ (saturation).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QuantizerSpec<T> {
    levels: u32,
    step: T,
}

impl<T: Real> QuantizerSpec<T> {
    pub fn new(levels: u32, step: T) -> Result<Self, QuantizerError> {
        check_levels(levels)?;
        check_step(step)?;
        Ok(QuantizerSpec { levels, step })
    }

    /// Quantizer using the SDNR-optimal step for `levels`.
    pub fn optimal(levels: u32) -> Result<Self, QuantizerError> {
        Self::new(levels, T::lit(optimal_step(levels)?))
    }

    pub fn levels(&self) -> u32 {
        self.levels
    }

    pub fn step(&self) -> T {
        self.step
    }

    /// Number of bits per real component, `log2(L)` (fractional if `L` is not a power of two).
    pub fn bits(&self) -> f64 {
        (self.levels as f64).log2()
    }

    /// The `L - 1` interior decision thresholds, strictly increasing.
    pub fn thresholds(&self) -> Vec<T> {
        let half = T::lit(self.levels as f64 / 2.0);
        (1..self.levels).map(|l| (T::lit(l as f64) - half) * self.step).collect()
    }

    /// The `L` reconstruction values, ascending and symmetric about zero.
    pub fn reconstructions(&self) -> Vec<T> {
        (0..self.levels).map(|l| self.reconstruction(l)).collect()
    }

    #[inline]
    fn reconstruction(&self, cell: u32) -> T {
        (T::lit(cell as f64) - T::lit((self.levels as f64 - 1.0) / 2.0)) * self.step
    }

    /// Cell index of a normalized input.
    #[inline]
    pub fn cell_index(&self, x: T) -> u32 {
        // Number of thresholds strictly below x.
        let u = x / self.step + T::lit(self.levels as f64 / 2.0);
        let j = u.ceil() - T::one();
        if j <= T::zero() {
            0
        } else {
            let top = (self.levels - 1) as f64;
            j.as_f64().min(top) as u32
        }
    }

    /// Quantizes an already-normalized input. No validation: NaN maps to the lowest cell.
    #[inline]
    pub fn quantize_normalized(&self, x: T) -> T {
        self.reconstruction(self.cell_index(x))
    }

    pub fn factors(&self) -> BussgangFactors<T> {
        BussgangFactors {
            alpha: alpha_closed_form(self.step, self.levels),
            lambda: lambda_closed_form(self.step, self.levels),
        }
    }
}

/// Bussgang gain `α` and output/input power ratio `λ` of a quantizer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BussgangFactors<T> {
    pub alpha: T,
    pub lambda: T,
}

impl<T: Real> BussgangFactors<T> {
    /// Factors of an ideal (infinite-resolution) quantizer.
    pub fn transparent() -> Self {
        BussgangFactors { alpha: T::one(), lambda: T::one() }
    }

    /// `λ - α²`: distortion power per unit input power.
    pub fn distortion_factor(&self) -> T {
        self.lambda - self.alpha * self.alpha
    }

    pub fn sdnr(&self) -> T {
        self.alpha * self.alpha / self.distortion_factor()
    }
}

/// Quantizer resolution: a finite even level count or infinite (pass-through).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Levels {
    Finite(u32),
    Infinite,
}

impl Levels {
    pub fn is_infinite(&self) -> bool {
        matches!(self, Levels::Infinite)
    }
}

impl fmt::Display for Levels {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Levels::Finite(l) => write!(f, "{l}"),
            Levels::Infinite => f.write_str("inf"),
        }
    }
}

impl FromStr for Levels {
    type Err = QuantizerError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("inf") || s == "∞" {
            return Ok(Levels::Infinite);
        }
        let l: u32 = s.parse().map_err(|_| QuantizerError::Parse(s.to_string()))?;
        check_levels(l)?;
        Ok(Levels::Finite(l))
    }
}

impl Serialize for Levels {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Levels::Finite(l) => s.serialize_u32(*l),
            Levels::Infinite => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Levels {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(u32),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Int(l) => {
                check_levels(l).map_err(serde::de::Error::custom)?;
                Ok(Levels::Finite(l))
            }
            Raw::Str(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// A fronthaul quantizer: uniform with a given spec, or transparent (infinite resolution).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Quantizer<T> {
    Uniform(QuantizerSpec<T>),
    Transparent,
}

impl<T: Real> Quantizer<T> {
    /// SDNR-optimal uniform quantizer for a finite level count, else transparent.
    pub fn for_levels(levels: Levels) -> Result<Self, QuantizerError> {
        match levels {
            Levels::Finite(l) => Ok(Quantizer::Uniform(QuantizerSpec::optimal(l)?)),
            Levels::Infinite => Ok(Quantizer::Transparent),
        }
    }

    pub fn levels(&self) -> Levels {
        match self {
            Quantizer::Uniform(s) => Levels::Finite(s.levels),
            Quantizer::Transparent => Levels::Infinite,
        }
    }

    pub fn factors(&self) -> BussgangFactors<T> {
        match self {
            Quantizer::Uniform(s) => s.factors(),
            Quantizer::Transparent => BussgangFactors::transparent(),
        }
    }

    /// Scales by `sigma`, quantizes, scales back. No validation (hot path).
    #[inline]
    pub fn apply_real(&self, x: T, sigma: T) -> T {
        match self {
            Quantizer::Uniform(s) => sigma * s.quantize_normalized(x / sigma),
            Quantizer::Transparent => x,
        }
    }

    /// Quantizes real and imaginary parts independently with per-component scale `sigma`.
    #[inline]
    pub fn apply_complex(&self, x: Complex<T>, sigma: T) -> Complex<T> {
        match self {
            Quantizer::Uniform(s) => Complex::new(
                sigma * s.quantize_normalized(x.re / sigma),
                sigma * s.quantize_normalized(x.im / sigma),
            ),
            Quantizer::Transparent => x,
        }
    }
}

fn check_scale<T: Real>(sigma: T) -> Result<(), QuantizerError> {
    if !(sigma.is_finite() && sigma > T::zero()) {
        return Err(QuantizerError::InvalidScale(sigma.as_f64()));
    }
    Ok(())
}

/// Quantizes `x` whose a-priori standard deviation is `sigma`.
pub fn quantize_real<T: Real>(x: T, spec: &QuantizerSpec<T>, sigma: T) -> Result<T, QuantizerError> {
    if !x.is_finite() {
        return Err(QuantizerError::NonFiniteInput(x.as_f64()));
    }
    check_scale(sigma)?;
    Ok(sigma * spec.quantize_normalized(x / sigma))
}

/// `Q(Re x) + i·Q(Im x)` with per-component standard deviation `sigma_component`.
pub fn quantize_complex<T: Real>(
    x: Complex<T>,
    spec: &QuantizerSpec<T>,
    sigma_component: T,
) -> Result<Complex<T>, QuantizerError> {
    Ok(Complex::new(
        quantize_real(x.re, spec, sigma_component)?,
        quantize_real(x.im, spec, sigma_component)?,
    ))
}

/// Elementwise complex quantization of a slice.
pub fn quantize_complex_slice<T: Real>(
    xs: &[Complex<T>],
    spec: &QuantizerSpec<T>,
    sigma_component: T,
) -> Result<Vec<Complex<T>>, QuantizerError> {
    xs.iter().map(|&x| quantize_complex(x, spec, sigma_component)).collect()
}

fn alpha_closed_form<T: Real>(delta: T, levels: u32) -> T {
    let half_d2 = delta * delta * T::lit(0.5);
    let tail: T = (1..levels / 2)
        .map(|l| {
            let l = T::lit(l as f64);
            (-l * l * half_d2).exp()
        })
        .sum();
    delta / (T::lit(2.0) * T::PI()).sqrt() * (T::one() + T::lit(2.0) * tail)
}

fn lambda_closed_form<T: Real>(delta: T, levels: u32) -> T {
    let tail: T = (1..levels / 2)
        .map(|l| {
            let l = T::lit(l as f64);
            l * (l * delta).normal_sf()
        })
        .sum();
    delta * delta * (T::lit(0.25) + T::lit(4.0) * tail)
}

/// Bussgang gain of the `L`-level quantizer with step `Δ` on unit-variance Gaussian input.
pub fn alpha_factor<T: Real>(delta: T, levels: u32) -> Result<T, QuantizerError> {
    check_levels(levels)?;
    check_step(delta)?;
    Ok(alpha_closed_form(delta, levels))
}

/// Output/input power ratio of the quantizer on unit-variance Gaussian input.
pub fn lambda_factor<T: Real>(delta: T, levels: u32) -> Result<T, QuantizerError> {
    check_levels(levels)?;
    check_step(delta)?;
    Ok(lambda_closed_form(delta, levels))
}

/// Distortion variance `(λ - α²)·P_x` for input power `P_x`.
pub fn distortion_power<T: Real>(input_power: T, factors: &BussgangFactors<T>) -> Result<T, QuantizerError> {
    if !(input_power >= T::zero()) {
        return Err(QuantizerError::NegativePower(input_power.as_f64()));
    }
    Ok(factors.distortion_factor() * input_power)
}

/// Signal-to-distortion-noise ratio `α²/(λ - α²)` (linear).
pub fn sdnr<T: Real>(delta: T, levels: u32) -> Result<T, QuantizerError> {
    let a = alpha_factor(delta, levels)?;
    let l = lambda_factor(delta, levels)?;
    Ok(a * a / (l - a * a))
}

/// Mean squared error `E(Q(x) - x)²` on unit-variance input: `λ - 2α + 1`.
fn unit_mse(delta: f64, levels: u32) -> f64 {
    alpha_closed_form(delta, levels).mul_add(-2.0, lambda_closed_form(delta, levels)) + 1.0
}

/// Golden-section minimization on `[lo, hi]`, terminating when the bracket is
/// within `rtol` of its midpoint.
pub(crate) fn golden_section_min(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, rtol: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while hi - lo > rtol * 0.5 * (hi + lo).abs() {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = f(x2);
        }
    }
    0.5 * (lo + hi)
}

/// Brackets the minimum of `f` on a log grid over `[lo, hi]`, then refines it.
fn bracketed_min(f: impl Fn(f64) -> f64, lo: f64, hi: f64, rtol: f64) -> f64 {
    const GRID: usize = 240;
    let ratio = (hi / lo).ln() / GRID as f64;
    let grid: Vec<f64> = (0..=GRID).map(|i| lo * (ratio * i as f64).exp()).collect();
    let best = (0..=GRID)
        .min_by(|&a, &b| f(grid[a]).total_cmp(&f(grid[b])))
        .unwrap_or(0);
    let a = grid[best.saturating_sub(1)];
    let b = grid[(best + 1).min(GRID)];
    golden_section_min(f, a, b, rtol)
}

/// SDNR-maximizing step size for `levels` on unit-variance input.
///
/// For `L = 2` the SDNR does not depend on `Δ`; the step minimizing the
/// quantizer MSE is returned instead.
pub fn optimal_step(levels: u32) -> Result<f64, QuantizerError> {
    check_levels(levels)?;
    let (lo, hi) = STEP_SEARCH_RANGE;
    let step = if levels == 2 {
        bracketed_min(|d| unit_mse(d, 2), lo, hi, STEP_SEARCH_RTOL)
    } else {
        bracketed_min(
            |d| {
                let a = alpha_closed_form(d, levels);
                let l = lambda_closed_form(d, levels);
                // -SDNR, written to stay finite when the distortion vanishes numerically.
                -(a * a) / (l - a * a).max(f64::MIN_POSITIVE)
            },
            lo,
            hi,
            STEP_SEARCH_RTOL,
        )
    };
    Ok(step)
}

/// Monte-Carlo estimates of the Bussgang factors, with their standard errors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmpiricalBussgang {
    pub factors: BussgangFactors<f64>,
    pub alpha_std_error: f64,
    pub lambda_std_error: f64,
    /// Normalized correlation `E[x·(Q(x) - α̂x)] / E[x²]`; zero by construction of `α̂`
    /// up to rounding, reported for completeness.
    pub residual_correlation: f64,
    /// Correlation coefficient between `x` and `Q(x) - α_closed·x`.
    pub closed_form_residual_correlation: f64,
    pub samples: usize,
}

/// Estimates `α̂ = Σx·Q(x)/Σx²` and `λ̂ = ΣQ(x)²/Σx²` from unit-variance
/// Gaussian draws. Deterministic in `seed`.
pub fn empirical_bussgang(spec: &QuantizerSpec<f64>, samples: usize, seed: u64) -> EmpiricalBussgang {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let alpha_cf = spec.factors().alpha;
    let (mut sxq, mut sqq, mut sxx) = (0.0, 0.0, 0.0);
    // Per-sample terms of the ratio estimators, for delta-method standard errors.
    let (mut sxq2, mut sqq2, mut sx4, mut sxq_xx, mut sqq_xx) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let (mut sdd, mut sxd) = (0.0, 0.0);
    for _ in 0..samples {
        let x = f64::standard_normal(&mut rng);
        let q = spec.quantize_normalized(x);
        let (xq, qq, xx) = (x * q, q * q, x * x);
        sxq += xq;
        sqq += qq;
        sxx += xx;
        sxq2 += xq * xq;
        sqq2 += qq * qq;
        sx4 += xx * xx;
        sxq_xx += xq * xx;
        sqq_xx += qq * xx;
        let d = q - alpha_cf * x;
        sdd += d * d;
        sxd += x * d;
    }
    let n = samples as f64;
    let alpha = sxq / sxx;
    let lambda = sqq / sxx;
    // Delta method for a ratio of means: Var(r̂) ≈ Var(a - r·b) / (n·E[b]²), b = x².
    // The residual a - r̂·b has zero sample mean by construction of r̂.
    let ratio_se = |s_aa: f64, s_ab: f64, r: f64| {
        let v = (s_aa - 2.0 * r * s_ab + r * r * sx4) / n;
        (v.max(0.0) / n).sqrt() / (sxx / n)
    };
    let alpha_se = ratio_se(sxq2, sxq_xx, alpha);
    let lambda_se = ratio_se(sqq2, sqq_xx, lambda);
    let residual = (sxq - alpha * sxx) / sxx;
    let cf_corr = sxd / (sxx * sdd).sqrt();
    EmpiricalBussgang {
        factors: BussgangFactors { alpha, lambda },
        alpha_std_error: alpha_se,
        lambda_std_error: lambda_se,
        residual_correlation: residual,
        closed_form_residual_correlation: cf_corr,
        samples,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn spec(levels: u32, step: f64) -> QuantizerSpec<f64> {
        QuantizerSpec::new(levels, step).unwrap()
    }

    #[test]
    fn sign_quantizer_and_saturation() {
        assert_eq!(quantize_real(0.3, &spec(2, 1.0), 1.0).unwrap(), 0.5);
        assert_eq!(quantize_real(10.0, &spec(4, 1.0), 1.0).unwrap(), 1.5);
        assert_eq!(quantize_real(-10.0, &spec(4, 1.0), 1.0).unwrap(), -1.5);
    }

    #[test]
    fn zero_falls_in_lower_cell() {
        assert_eq!(quantize_real(0.0, &spec(2, 1.0), 1.0).unwrap(), -0.5);
        let z = quantize_complex(Complex::new(0.0, 0.0), &spec(2, 1.0), 1.0).unwrap();
        assert_eq!(z, Complex::new(-0.5, -0.5));
        // Exactly on an interior threshold of L = 4.
        assert_eq!(quantize_real(1.0, &spec(4, 1.0), 1.0).unwrap(), 0.5);
        assert_eq!(quantize_real(1.0 + 1e-12, &spec(4, 1.0), 1.0).unwrap(), 1.5);
    }

    #[test]
    fn complex_components_quantized_separately() {
        let z = quantize_complex(Complex::new(0.3, -0.7), &spec(2, 1.0), 1.0).unwrap();
        assert_eq!(z, Complex::new(0.5, -0.5));
    }

    #[test]
    fn scaling_by_sigma() {
        let s = spec(4, 1.0);
        assert_eq!(quantize_real(3.0, &s, 2.0).unwrap(), 2.0 * 1.5);
        assert_eq!(quantize_real(0.4, &s, 2.0).unwrap(), 2.0 * 0.5);
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        let s = spec(4, 1.0);
        assert!(matches!(quantize_real(f64::NAN, &s, 1.0), Err(QuantizerError::NonFiniteInput(_))));
        assert!(matches!(quantize_real(f64::INFINITY, &s, 1.0), Err(QuantizerError::NonFiniteInput(_))));
        assert!(matches!(quantize_real(1.0, &s, 0.0), Err(QuantizerError::InvalidScale(_))));
        assert!(matches!(quantize_real(1.0, &s, -1.0), Err(QuantizerError::InvalidScale(_))));
        assert!(QuantizerSpec::new(3, 1.0).is_err());
        assert!(QuantizerSpec::new(0, 1.0).is_err());
        assert!(QuantizerSpec::new(4, 0.0).is_err());
        assert!(alpha_factor(1.0, 5).is_err());
        assert!(lambda_factor(1.0, 1).is_err());
        assert!(matches!(
            distortion_power(-1.0, &BussgangFactors { alpha: 0.5, lambda: 0.3 }),
            Err(QuantizerError::NegativePower(_))
        ));
    }

    #[test]
    fn thresholds_and_reconstructions() {
        let s = spec(4, 1.0);
        assert_eq!(s.thresholds(), vec![-1.0, 0.0, 1.0]);
        assert_eq!(s.reconstructions(), vec![-1.5, -0.5, 0.5, 1.5]);
        for levels in [2u32, 4, 8, 32] {
            let s = spec(levels, 0.7);
            let t = s.thresholds();
            let q = s.reconstructions();
            assert_eq!(t.len() as u32, levels - 1);
            assert!(t.windows(2).all(|w| w[0] < w[1]));
            for l in 0..levels as usize {
                assert!((q[l] + q[levels as usize - 1 - l]).abs() < 1e-12);
            }
            // Finite cells: reconstruction is the midpoint.
            for l in 1..levels as usize - 1 {
                assert!((q[l] - 0.5 * (t[l - 1] + t[l])).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn alpha_closed_form_values() {
        assert!((alpha_factor(1.0_f64, 2).unwrap() - 0.398942280401433).abs() < 1e-14);
        // Reference values from 30-digit evaluation (mpmath).
        assert!((alpha_factor(1.0_f64, 4).unwrap() - 0.882883729439719).abs() < 1e-14);
        assert!((alpha_factor(0.5_f64, 8).unwrap() - 0.923024787150051).abs() < 1e-14);
        assert!((alpha_factor(0.01_f64, 1024).unwrap() - 1.0).abs() < 1e-3);
    }

    #[test]
    fn lambda_closed_form_values() {
        assert!((lambda_factor(1.0_f64, 2).unwrap() - 0.25).abs() < 1e-15);
        assert!((lambda_factor(1.0_f64, 4).unwrap() - 0.884621015725828).abs() < 1e-14);
        assert!((lambda_factor(2.0_f64, 8).unwrap() - 1.36501563826573).abs() < 1e-13);
    }

    #[test]
    fn distortion_power_values() {
        let f = spec(2, 1.0).factors();
        assert_eq!(distortion_power(0.0, &f).unwrap(), 0.0);
        assert!((distortion_power(1.0, &f).unwrap() - 0.0908450569081047).abs() < 1e-14);
        assert!((distortion_power(3.0, &f).unwrap() - 3.0 * 0.0908450569081047).abs() < 1e-14);
    }

    #[test]
    fn sdnr_values() {
        let flat = (2.0 / std::f64::consts::PI) / (1.0 - 2.0 / std::f64::consts::PI);
        for d in [0.5_f64, 1.0, 2.0] {
            assert!((sdnr(d, 2).unwrap() / flat - 1.0).abs() < 1e-12);
        }
        assert!((sdnr(1.0_f64, 4).unwrap() - 7.41395691809709).abs() < 1e-11);
    }

    #[test]
    fn one_bit_step_minimizes_mse() {
        // Brute-force oracle on a fine grid, independent of the golden-section path.
        let grid_best = (1..60_000)
            .map(|i| i as f64 * 1e-4)
            .min_by(|a, b| unit_mse(*a, 2).total_cmp(&unit_mse(*b, 2)))
            .unwrap();
        let step = optimal_step(2).unwrap();
        assert!((step - 2.0 * (2.0 / std::f64::consts::PI).sqrt()).abs() < 1e-5);
        assert!((step - grid_best).abs() < 2e-4);
    }

    fn grid_sdnr_argmax(levels: u32) -> f64 {
        (1..60_000)
            .map(|i| i as f64 * 1e-4)
            .max_by(|a, b| sdnr(*a, levels).unwrap().total_cmp(&sdnr(*b, levels).unwrap()))
            .unwrap()
    }

    #[test]
    fn optimal_step_is_sdnr_maximum() {
        for levels in [4u32, 8, 16, 32] {
            let step = optimal_step(levels).unwrap();
            let best = sdnr(step, levels).unwrap();
            assert!(sdnr(step * 1.1, levels).unwrap() <= best);
            assert!(sdnr(step * 0.9, levels).unwrap() <= best);
            let oracle = grid_sdnr_argmax(levels);
            assert!((step - oracle).abs() < 2e-4, "L={levels}: {step} vs grid {oracle}");
        }
    }

    #[test]
    fn optimal_step_shrinks_and_sdnr_grows_with_levels() {
        let steps: Vec<f64> = [2u32, 4, 8, 16, 32].iter().map(|&l| optimal_step(l).unwrap()).collect();
        let sdnrs: Vec<f64> = [2u32, 4, 8, 16, 32]
            .iter()
            .zip(&steps)
            .map(|(&l, &d)| sdnr(d, l).unwrap())
            .collect();
        assert!(steps.windows(2).all(|w| w[1] < w[0]));
        assert!(sdnrs.windows(2).all(|w| w[1] > w[0]));
        assert!(optimal_step(1024).unwrap() < steps[4]);
    }

    #[test]
    fn factors_approach_unity_for_fine_quantizers() {
        let f = QuantizerSpec::<f64>::optimal(1024).unwrap().factors();
        assert!((f.alpha - 1.0).abs() < 1e-4);
        assert!((f.lambda - 1.0).abs() < 1e-4);
    }

    #[test]
    fn empirical_matches_closed_form() {
        for (levels, step) in [(2u32, 1.0), (4, 1.0), (8, 0.5)] {
            let s = spec(levels, step);
            let cf = s.factors();
            let mc = empirical_bussgang(&s, 400_000, 11);
            assert!((mc.factors.alpha - cf.alpha).abs() < 4.0 * mc.alpha_std_error, "{levels} {mc:?}");
            assert!((mc.factors.lambda - cf.lambda).abs() < 4.0 * mc.lambda_std_error, "{levels} {mc:?}");
            assert!(mc.closed_form_residual_correlation.abs() < 1e-2);
        }
    }

    #[test]
    fn empirical_is_deterministic() {
        let s = spec(4, 1.0);
        assert_eq!(empirical_bussgang(&s, 100_000, 3), empirical_bussgang(&s, 100_000, 3));
        assert_ne!(empirical_bussgang(&s, 100_000, 3), empirical_bussgang(&s, 100_000, 4));
    }

    #[test]
    fn levels_parse_and_display() {
        assert_eq!("inf".parse::<Levels>().unwrap(), Levels::Infinite);
        assert_eq!(" 32".parse::<Levels>().unwrap(), Levels::Finite(32));
        assert!("3".parse::<Levels>().is_err());
        assert!("x".parse::<Levels>().is_err());
        assert_eq!(Levels::Finite(4).to_string(), "4");
        assert_eq!(Levels::Infinite.to_string(), "inf");
    }

    #[test]
    fn transparent_quantizer_passes_through() {
        let q = Quantizer::<f64>::Transparent;
        let z = Complex::new(0.123, -4.5);
        assert_eq!(q.apply_complex(z, 0.01), z);
        assert_eq!(q.factors(), BussgangFactors::transparent());
    }

    #[test]
    fn f32_quantizer_agrees_with_f64() {
        let s32 = QuantizerSpec::<f32>::new(8, 0.586).unwrap();
        let s64 = spec(8, 0.586);
        for x in [-3.1f32, -0.2, 0.0, 0.61, 2.5] {
            assert_eq!(s32.cell_index(x), s64.cell_index(x as f64));
        }
        let (a32, a64) = (s32.factors().alpha as f64, s64.factors().alpha);
        assert!((a32 - a64).abs() < 1e-6);
    }

    proptest! {
        #[test]
        fn odd_symmetry(x in -20.0f64..20.0, levels in prop::sample::select(vec![2u32, 4, 8, 16, 32]), step in 0.05f64..3.0) {
            let s = spec(levels, step);
            let u = x / step + levels as f64 / 2.0;
            prop_assume!((u - u.round()).abs() > 1e-9);
            prop_assert_eq!(s.quantize_normalized(-x), -s.quantize_normalized(x));
        }

        #[test]
        fn midrise_error_bound(x in -20.0f64..20.0, levels in prop::sample::select(vec![2u32, 4, 8, 16, 32]), step in 0.05f64..3.0) {
            let s = spec(levels, step);
            let q = s.quantize_normalized(x);
            let edge = (levels as f64 / 2.0 - 1.0) * step;
            if x.abs() <= edge {
                prop_assert!((q - x).abs() <= step / 2.0 + 1e-12);
            } else {
                prop_assert!((q.abs() - (levels as f64 - 1.0) * step / 2.0).abs() < 1e-12);
            }
        }

        #[test]
        fn distortion_nonnegative(levels in prop::sample::select(vec![2u32, 4, 8, 16, 32, 256]), step in 0.01f64..6.0) {
            let a = alpha_factor(step, levels).unwrap();
            let l = lambda_factor(step, levels).unwrap();
            prop_assert!(l >= a * a - 1e-15);
        }
    }
}
