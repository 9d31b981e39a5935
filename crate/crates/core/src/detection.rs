//! Uplink data phase: quantized reception, effective noise, ZF detection and rates.

use ndarray::{Array1, Array2};
use num_complex::Complex;
use rand::Rng;
use serde::Serialize;
use thiserror::Error;

use crate::csi::CsiScheme;
use crate::linalg::{adjoint, weighted_gram, Cholesky, LinalgError};
use crate::quantizer::{BussgangFactors, Levels, Quantizer};
use crate::scalar::Real;

/// Default cap on reported SINR values (e.g. noiseless single-user MRC).
pub const SINR_CEILING: f64 = 1e9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DetectionError {
    #[error("effective noise at AP {ap} is not positive ({value:e})")]
    NonPositiveNoise { ap: usize, value: f64 },
    #[error("zero-forcing needs M >= K, got M={aps}, K={users}")]
    TooFewAps { aps: usize, users: usize },
    #[error("invalid frame: need 0 < tau_p ({tau_p}) < tau_c ({tau_c})")]
    InvalidFrame { tau_c: usize, tau_p: usize },
    #[error("SINR must be nonnegative, got {0}")]
    NegativeSinr(f64),
    #[error("dimension mismatch: {0}")]
    Shape(String),
    #[error("estimated channel is rank deficient: {0}")]
    RankDeficient(#[from] LinalgError),
}

/// `y_d = √ρ_u G x_d + w_d` with unit-variance noise.
pub fn receive_data<T: Real, R: Rng + ?Sized>(
    g: &Array2<Complex<T>>,
    x: &Array1<Complex<T>>,
    rho_u: T,
    rng: &mut R,
) -> Array1<Complex<T>> {
    let s = rho_u.sqrt();
    let mut y = g.dot(x).mapv(|z| z * s);
    for v in y.iter_mut() {
        *v += T::complex_normal(rng, T::one());
    }
    y
}

/// Per-AP quantization with component scale `√((ρ_u Σ_k β_mk + 1)/2)`.
pub fn quantize_data<T: Real>(
    y: &Array1<Complex<T>>,
    beta_row_sums: &[T],
    rho_u: T,
    quantizer: &Quantizer<T>,
) -> Array1<Complex<T>> {
    assert_eq!(y.len(), beta_row_sums.len(), "one gain sum per AP");
    let half = T::lit(0.5);
    Array1::from_iter(
        y.iter()
            .zip(beta_row_sums)
            .map(|(&z, &s)| quantizer.apply_complex(z, ((rho_u * s + T::one()) * half).sqrt())),
    )
}

/// Diagonal of `Λ = E{zzᴴ}` with its three contributions kept separately.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectiveNoiseModel<T> {
    pub lambda: Array1<T>,
    /// Data-quantizer distortion `(λ − α²)(ρ_u Σ_k β_mk + 1)`.
    pub distortion: Array1<T>,
    /// `α²σ_n²` with `σ_n² = 1`.
    pub thermal: T,
    /// `ρ_u α² Σ_k ε_mk`.
    pub leakage: Array1<T>,
}

impl<T: Real> EffectiveNoiseModel<T> {
    pub fn as_slice(&self) -> &[T] {
        self.lambda.as_slice().expect("contiguous")
    }
}

pub fn lambda_diagonal<T: Real>(
    eps_q: &Array2<T>,
    beta: &Array2<T>,
    rho_u: T,
    factors: BussgangFactors<T>,
) -> Result<EffectiveNoiseModel<T>, DetectionError> {
    if eps_q.dim() != beta.dim() {
        return Err(DetectionError::Shape(format!("eps {:?} vs beta {:?}", eps_q.dim(), beta.dim())));
    }
    let a2 = factors.alpha * factors.alpha;
    let dist = factors.lambda - a2;
    let distortion = Array1::from_iter(beta.rows().into_iter().map(|r| dist * (rho_u * r.sum() + T::one())));
    let leakage = Array1::from_iter(eps_q.rows().into_iter().map(|r| rho_u * a2 * r.sum()));
    let lambda = Array1::from_iter(distortion.iter().zip(leakage.iter()).map(|(&d, &l)| d + a2 + l));
    if let Some((ap, &value)) = lambda.iter().enumerate().find(|(_, v)| !(**v > T::zero() && v.is_finite())) {
        return Err(DetectionError::NonPositiveNoise { ap, value: value.as_f64() });
    }
    Ok(EffectiveNoiseModel { lambda, distortion, thermal: a2, leakage })
}

/// Detector front-end used for the exact SINR.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ZfFrontEnd {
    /// `(ĜᴴΛ⁻¹Ĝ)⁻¹ĜᴴΛ⁻¹`: ZF after whitening the effective noise.
    Whitened,
    /// `(ĜᴴĜ)⁻¹Ĝᴴ`: ZF that ignores the noise structure.
    Plain,
}

fn check_dims<T>(g_hat: &Array2<Complex<T>>, lambda: &[T]) -> Result<(), DetectionError> {
    let (m, k) = g_hat.dim();
    if lambda.len() != m {
        return Err(DetectionError::Shape(format!("{} noise entries for {m} APs", lambda.len())));
    }
    if m < k {
        return Err(DetectionError::TooFewAps { aps: m, users: k });
    }
    Ok(())
}

/// `Āᴴ = (ĜᴴĜ)⁻¹Ĝᴴ`, `K×M`.
pub fn zf_plain_matrix<T: Real>(g_hat: &Array2<Complex<T>>) -> Result<Array2<Complex<T>>, DetectionError> {
    let (m, _) = g_hat.dim();
    check_dims(g_hat, &vec![T::one(); m])?;
    let gram = weighted_gram(g_hat.view(), &vec![T::one(); m]);
    let ch = Cholesky::factor(&gram)?;
    Ok(ch.solve_matrix(&adjoint(g_hat.view())))
}

/// `(ĜᴴΛ⁻¹Ĝ)⁻¹ĜᴴΛ⁻¹`, `K×M`.
pub fn zf_whitened_matrix<T: Real>(g_hat: &Array2<Complex<T>>, lambda: &[T]) -> Result<Array2<Complex<T>>, DetectionError> {
    check_dims(g_hat, lambda)?;
    let inv: Vec<T> = lambda.iter().map(|&l| T::one() / l).collect();
    let ch = Cholesky::factor(&weighted_gram(g_hat.view(), &inv))?;
    let mut rhs = adjoint(g_hat.view());
    for (mut col, &w) in rhs.columns_mut().into_iter().zip(&inv) {
        col.mapv_inplace(|z| z * w);
    }
    Ok(ch.solve_matrix(&rhs))
}

pub fn zf_whitened_detect<T: Real>(
    r: &Array1<Complex<T>>,
    g_hat: &Array2<Complex<T>>,
    lambda: &[T],
) -> Result<Array1<Complex<T>>, DetectionError> {
    check_dims(g_hat, lambda)?;
    if r.len() != g_hat.nrows() {
        return Err(DetectionError::Shape(format!("{} samples for {} APs", r.len(), g_hat.nrows())));
    }
    let inv: Vec<T> = lambda.iter().map(|&l| T::one() / l).collect();
    let ch = Cholesky::factor(&weighted_gram(g_hat.view(), &inv))?;
    let k = g_hat.ncols();
    let mut rhs = vec![Complex::new(T::zero(), T::zero()); k];
    for ((row, &ri), &w) in g_hat.rows().into_iter().zip(r.iter()).zip(&inv) {
        let rw = ri * w;
        for (acc, g) in rhs.iter_mut().zip(row.iter()) {
            *acc += g.conj() * rw;
        }
    }
    ch.solve_in_place(&mut rhs);
    Ok(Array1::from(rhs))
}

/// `SINR_k = ρ_u α² / [AᴴΛA]_kk` with `E{zzᴴ} = Λ`.
pub fn zf_exact_sinr<T: Real>(
    g_hat: &Array2<Complex<T>>,
    lambda: &[T],
    rho_u: T,
    alpha: T,
    front_end: ZfFrontEnd,
) -> Result<Vec<T>, DetectionError> {
    check_dims(g_hat, lambda)?;
    let num = rho_u * alpha * alpha;
    let noise: Vec<T> = match front_end {
        ZfFrontEnd::Whitened => {
            let inv: Vec<T> = lambda.iter().map(|&l| T::one() / l).collect();
            Cholesky::factor(&weighted_gram(g_hat.view(), &inv))?.inverse_diagonal()
        }
        ZfFrontEnd::Plain => {
            let a_h = zf_plain_matrix(g_hat)?;
            a_h.rows()
                .into_iter()
                .map(|row| row.iter().zip(lambda).map(|(z, &l)| z.norm_sqr() * l).sum())
                .collect()
        }
    };
    Ok(noise.into_iter().map(|v| num / v).collect())
}

/// `SINR_k ≈ ρ_u α² ((M−K+1)/M) ĝ_kᴴ Λ⁻¹ ĝ_k`.
pub fn zf_approx_sinr<T: Real>(g_hat: &Array2<Complex<T>>, lambda: &[T], rho_u: T, alpha: T) -> Result<Vec<T>, DetectionError> {
    check_dims(g_hat, lambda)?;
    let (m, k) = g_hat.dim();
    let scale = rho_u * alpha * alpha * T::lit((m - k + 1) as f64) / T::lit(m as f64);
    let mut acc = vec![T::zero(); k];
    for (row, &l) in g_hat.rows().into_iter().zip(lambda) {
        let w = T::one() / l;
        for (a, z) in acc.iter_mut().zip(row.iter()) {
            *a += z.norm_sqr() * w;
        }
    }
    Ok(acc.into_iter().map(|v| v * scale).collect())
}

/// MRC with perfect local CSI, SINR conditioned on the channel realization:
/// `ρ‖g_k‖⁴ / (ρ Σ_{j≠k} |g_kᴴg_j|² + ‖g_k‖²)`.
pub fn mrc_conditional_sinr<T: Real>(g: &Array2<Complex<T>>, rho_u: T, ceiling: T) -> Vec<T> {
    let k = g.ncols();
    let gram = weighted_gram(g.view(), &vec![T::one(); g.nrows()]);
    (0..k)
        .map(|i| {
            let n = gram[[i, i]].re;
            let interference: T = (0..k).filter(|&j| j != i).map(|j| gram[[i, j]].norm_sqr()).sum();
            let denom = rho_u * interference + n;
            let num = rho_u * n * n;
            if denom > T::zero() {
                (num / denom).min(ceiling)
            } else {
                ceiling
            }
        })
        .collect()
}

/// Empirical per-user SINR of unquantized MRC `x̂_k = Σ_m g*_mk y_m`, over `symbols`
/// Gaussian symbol vectors. Signal power uses the conditional mean `E{x̂_k x_k*}`;
/// everything else counts as interference plus noise.
pub fn mrc_local_baseline<T: Real, R: Rng + ?Sized>(
    g: &Array2<Complex<T>>,
    rho_u: T,
    rng: &mut R,
    symbols: usize,
    ceiling: T,
) -> Vec<T> {
    let k = g.ncols();
    let g_h = adjoint(g.view());
    let mut corr = vec![Complex::new(T::zero(), T::zero()); k];
    let mut power = vec![T::zero(); k];
    let mut x_pow = vec![T::zero(); k];
    for _ in 0..symbols {
        let x = Array1::from_iter((0..k).map(|_| T::complex_normal(rng, T::one())));
        let y = receive_data(g, &x, rho_u, rng);
        let xh = g_h.dot(&y);
        for i in 0..k {
            corr[i] += xh[i] * x[i].conj();
            power[i] += xh[i].norm_sqr();
            x_pow[i] += x[i].norm_sqr();
        }
    }
    empirical_sinr(&corr, &power, &x_pow, ceiling)
}

fn empirical_sinr<T: Real>(corr: &[Complex<T>], power: &[T], x_pow: &[T], ceiling: T) -> Vec<T> {
    corr.iter()
        .zip(power)
        .zip(x_pow)
        .map(|((&c, &p), &xp)| {
            let gain = c / xp;
            let signal = gain.norm_sqr() * xp;
            let residual = p - signal;
            if residual > T::zero() {
                (signal / residual).min(ceiling)
            } else {
                ceiling
            }
        })
        .collect()
}

/// Inputs to the symbol-level SINR oracle.
pub struct SymbolLevelSetup<'a, T> {
    pub g_hat: &'a Array2<Complex<T>>,
    /// Per-link variance of the channel estimation error.
    pub epsilon: &'a Array2<T>,
    pub beta_row_sums: &'a [T],
    pub lambda: &'a [T],
    pub rho_u: T,
    pub quantizer: &'a Quantizer<T>,
}

/// End-to-end symbol-level SINR of the whitened ZF detector at fixed `Ĝ`.
///
/// Each symbol draws a fresh channel `G = Ĝ + G̃` with `G̃ ~ CN(0, ε)`, Gaussian
/// data and noise, passes the received signal through the data quantizer and
/// detects. The SINR is measured as for [`mrc_local_baseline`].
pub fn symbol_level_sinr<T: Real, R: Rng + ?Sized>(
    setup: &SymbolLevelSetup<'_, T>,
    symbols: usize,
    rng: &mut R,
) -> Result<Vec<T>, DetectionError> {
    let (m, k) = setup.g_hat.dim();
    let a_h = zf_whitened_matrix(setup.g_hat, setup.lambda)?;
    let sd = setup.epsilon.mapv(|e| e.sqrt());
    let mut corr = vec![Complex::new(T::zero(), T::zero()); k];
    let mut power = vec![T::zero(); k];
    let mut x_pow = vec![T::zero(); k];
    let mut g = Array2::<Complex<T>>::zeros((m, k));
    for _ in 0..symbols {
        ndarray::Zip::from(&mut g).and(setup.g_hat).and(&sd).for_each(|g, &gh, &s| {
            *g = gh + T::complex_normal(rng, T::one()) * s;
        });
        let x = Array1::from_iter((0..k).map(|_| T::complex_normal(rng, T::one())));
        let y = receive_data(&g, &x, setup.rho_u, rng);
        let r = quantize_data(&y, setup.beta_row_sums, setup.rho_u, setup.quantizer);
        let xh = a_h.dot(&r);
        for i in 0..k {
            corr[i] += xh[i] * x[i].conj();
            power[i] += xh[i].norm_sqr();
            x_pow[i] += x[i].norm_sqr();
        }
    }
    Ok(empirical_sinr(&corr, &power, &x_pow, T::lit(SINR_CEILING)))
}

/// `log2(1 + SINR)` in bits per symbol.
pub fn user_rate<T: Real>(sinr: T) -> Result<T, DetectionError> {
    if !(sinr >= T::zero()) {
        return Err(DetectionError::NegativeSinr(sinr.as_f64()));
    }
    Ok((T::one() + sinr).log2())
}

/// Net throughput `B·((1 − τ_p/τ_c)/2)·R` in bits/s.
pub fn net_throughput<T: Real>(bandwidth_hz: T, tau_p: usize, tau_c: usize, rate: T) -> Result<T, DetectionError> {
    if tau_p == 0 || tau_p >= tau_c {
        return Err(DetectionError::InvalidFrame { tau_c, tau_p });
    }
    Ok(bandwidth_hz * (T::one() - T::lit(tau_p as f64) / T::lit(tau_c as f64)) * T::lit(0.5) * rate)
}

/// Per-user SINR, rate and throughput of one detector configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SinrReport<T> {
    pub scheme: CsiScheme,
    pub levels: Levels,
    pub approx_sinr: Vec<T>,
    pub exact_sinr: Option<Vec<T>>,
    /// Bits per symbol, from the approximate SINR.
    pub rate: Vec<T>,
    /// Bits per second.
    pub throughput_bps: Vec<T>,
}

impl<T: Real> SinrReport<T> {
    pub fn mean_throughput(&self) -> T {
        let n = T::lit(self.throughput_bps.len() as f64);
        self.throughput_bps.iter().copied().sum::<T>() / n
    }
}
