//! Pilot transmission and channel estimation over the fronthaul.
//!
//! Three schemes are supported: ideal (unquantized) LMMSE, estimate-and-quantize
//! (EQ: the AP quantizes its own LMMSE estimate) and quantize-and-estimate (QE:
//! the AP forwards quantized raw pilots and the CPU estimates).

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use num_complex::Complex;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::harness::{seed_substream, Stage};
use crate::propagation::{draw_small_scale, NetworkRealization};
use crate::quantizer::{BussgangFactors, Quantizer, QuantizerError};
use crate::scalar::Real;

/// Channel gains below this are treated as carrying no information.
pub const DEGENERATE_GAMMA: f64 = 1e-30;

/// Trials summed per work unit in the Monte-Carlo oracles. Fixed so the
/// floating-point reduction order does not depend on the thread count.
const TRIAL_CHUNK: usize = 32;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CsiError {
    #[error("{users} users cannot have orthogonal pilots of length {tau_p}")]
    TooManyUsers { users: usize, tau_p: usize },
    #[error("pilot length must be positive")]
    EmptyPilot,
    #[error("invalid frame: need 0 < tau_p ({tau_p}) < tau_c ({tau_c})")]
    InvalidFrame { tau_c: usize, tau_p: usize },
    #[error("SNR must be finite and nonnegative, got {0}")]
    InvalidSnr(f64),
    #[error("dimension mismatch: {0}")]
    Shape(String),
    #[error("at least {min} trials required, got {got}")]
    TooFewTrials { min: usize, got: usize },
    #[error(transparent)]
    Quantizer(#[from] QuantizerError),
}

/// Orthonormal pilot sequences, one column per user.
#[derive(Debug, Clone, PartialEq)]
pub struct PilotBook<T> {
    tau_p: usize,
    sequences: Array2<Complex<T>>,
}

/// First `K` columns of the unitary `τ_p`-point DFT matrix.
pub fn make_pilots<T: Real>(tau_p: usize, users: usize) -> Result<PilotBook<T>, CsiError> {
    PilotBook::dft(tau_p, users)
}

impl<T: Real> PilotBook<T> {
    pub fn dft(tau_p: usize, users: usize) -> Result<Self, CsiError> {
        if tau_p == 0 {
            return Err(CsiError::EmptyPilot);
        }
        if users > tau_p {
            return Err(CsiError::TooManyUsers { users, tau_p });
        }
        let scale = T::one() / T::lit(tau_p as f64).sqrt();
        let sequences = Array2::from_shape_fn((tau_p, users), |(i, k)| {
            // Reduce the phase index first so large τ_p keeps full precision.
            let idx = (i * k) % tau_p;
            let phase = -T::lit(2.0) * T::PI() * T::lit(idx as f64) / T::lit(tau_p as f64);
            Complex::from_polar(scale, phase)
        });
        Ok(PilotBook { tau_p, sequences })
    }

    pub fn tau_p(&self) -> usize {
        self.tau_p
    }

    pub fn user_count(&self) -> usize {
        self.sequences.ncols()
    }

    /// `τ_p×K` matrix `[φ_1 … φ_K]`.
    pub fn sequences(&self) -> ArrayView2<'_, Complex<T>> {
        self.sequences.view()
    }

    pub fn sequence(&self, k: usize) -> ArrayView1<'_, Complex<T>> {
        self.sequences.column(k)
    }

    /// `Θ = √(τ_p ρ_p)·[φ_1 … φ_K]`.
    pub fn theta(&self, rho_p: T) -> Array2<Complex<T>> {
        let s = (T::lit(self.tau_p as f64) * rho_p).sqrt();
        self.sequences.mapv(|z| z * s)
    }

    /// `|φ_kᴴ φ_k'|²` for all pairs.
    pub fn cross_power(&self) -> Array2<T> {
        let k = self.user_count();
        Array2::from_shape_fn((k, k), |(i, j)| project_pilot(self.sequence(j), self.sequence(i)).norm_sqr())
    }
}

/// Pilot and data power allocation with equal energy per phase.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PowerSplit<T> {
    pub rho: T,
    pub rho_p: T,
    pub rho_u: T,
    pub tau_c: usize,
    pub tau_p: usize,
    pub tau_u: usize,
}

impl<T: Real> PowerSplit<T> {
    pub fn new(rho: T, tau_c: usize, tau_p: usize) -> Result<Self, CsiError> {
        if tau_p == 0 || tau_p >= tau_c {
            return Err(CsiError::InvalidFrame { tau_c, tau_p });
        }
        if !(rho.is_finite() && rho >= T::zero()) {
            return Err(CsiError::InvalidSnr(rho.as_f64()));
        }
        let tau_u = tau_c - tau_p;
        let half_energy = rho * T::lit(tau_c as f64) * T::lit(0.5);
        Ok(PowerSplit {
            rho,
            rho_p: half_energy / T::lit(tau_p as f64),
            rho_u: half_energy / T::lit(tau_u as f64),
            tau_c,
            tau_p,
            tau_u,
        })
    }
}

pub fn power_split<T: Real>(rho: T, tau_c: usize, tau_p: usize) -> Result<PowerSplit<T>, CsiError> {
    PowerSplit::new(rho, tau_c, tau_p)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CsiScheme {
    #[serde(rename = "ideal")]
    Ideal,
    #[serde(rename = "eq")]
    EstimateAndQuantize,
    #[serde(rename = "qe")]
    QuantizeAndEstimate,
}

impl CsiScheme {
    pub fn as_str(&self) -> &'static str {
        match self {
            CsiScheme::Ideal => "ideal",
            CsiScheme::EstimateAndQuantize => "eq",
            CsiScheme::QuantizeAndEstimate => "qe",
        }
    }
}

impl fmt::Display for CsiScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CsiScheme {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ideal" => Ok(CsiScheme::Ideal),
            "eq" => Ok(CsiScheme::EstimateAndQuantize),
            "qe" => Ok(CsiScheme::QuantizeAndEstimate),
            other => Err(format!("unknown CSI scheme `{other}` (expected ideal, eq or qe)")),
        }
    }
}

/// Per-link second-order statistics of a CSI scheme.
///
/// For EQ, `c` and `gamma` describe the full-precision estimate before it is
/// quantized; `epsilon` is the MSE of the quantized estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimationStatistics<T> {
    pub scheme: CsiScheme,
    pub c: Array2<T>,
    pub gamma: Array2<T>,
    pub epsilon: Array2<T>,
    pub beta: Array2<T>,
    /// `E{|r_mk|²}` of the pilot projection.
    pub a: Array2<T>,
    /// Per-element received pilot power at each AP.
    pub b: Array1<T>,
    /// Bussgang factors of the CSI quantizer, if any.
    pub factors: Option<BussgangFactors<T>>,
}

impl<T: Real> EstimationStatistics<T> {
    pub fn ap_count(&self) -> usize {
        self.c.nrows()
    }

    pub fn user_count(&self) -> usize {
        self.c.ncols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsiEstimate<T> {
    pub g_hat: Array2<Complex<T>>,
    pub scheme: CsiScheme,
}

/// Received pilot block, `M×τ_p`: row `m` is `√(τ_pρ_p) Σ_k g_mk φ_kᵀ + n_m`.
pub fn receive_pilots<T: Real, R: Rng + ?Sized>(
    g: &Array2<Complex<T>>,
    pilots: &PilotBook<T>,
    rho_p: T,
    rng: &mut R,
) -> Array2<Complex<T>> {
    let mut y = noiseless_pilots(g, pilots, rho_p);
    for v in y.iter_mut() {
        *v += T::complex_normal(rng, T::one());
    }
    y
}

fn noiseless_pilots<T: Real>(g: &Array2<Complex<T>>, pilots: &PilotBook<T>, rho_p: T) -> Array2<Complex<T>> {
    assert_eq!(g.ncols(), pilots.user_count(), "channel and pilot user counts differ");
    let theta_t = pilots.theta(rho_p).reversed_axes();
    g.dot(&theta_t)
}

/// `φ_kᴴ y`.
pub fn project_pilot<T: Real>(y_row: ArrayView1<'_, Complex<T>>, phi_k: ArrayView1<'_, Complex<T>>) -> Complex<T> {
    assert_eq!(y_row.len(), phi_k.len(), "pilot length mismatch");
    y_row.iter().zip(phi_k.iter()).fold(Complex::new(T::zero(), T::zero()), |acc, (&y, &p)| acc + p.conj() * y)
}

/// Projections of every row of `Y_p` on every pilot, `M×K`.
pub fn project_all<T: Real>(y_p: &Array2<Complex<T>>, pilots: &PilotBook<T>) -> Array2<Complex<T>> {
    assert_eq!(y_p.ncols(), pilots.tau_p(), "pilot length mismatch");
    let conj = pilots.sequences.mapv(|z| z.conj());
    y_p.dot(&conj)
}

/// LMMSE statistics with an ideal fronthaul, allowing non-orthogonal pilots.
pub fn ideal_statistics<T: Real>(beta: &Array2<T>, pilots: &PilotBook<T>, rho_p: T) -> EstimationStatistics<T> {
    let (m, k) = beta.dim();
    assert_eq!(k, pilots.user_count(), "beta and pilot user counts differ");
    let tr = T::lit(pilots.tau_p() as f64) * rho_p;
    let sqrt_tr = tr.sqrt();
    let cross = pilots.cross_power();
    let mut a = Array2::<T>::zeros((m, k));
    for i in 0..m {
        for j in 0..k {
            let interference: T = (0..k).map(|q| beta[[i, q]] * cross[[j, q]]).sum();
            a[[i, j]] = tr * interference + T::one();
        }
    }
    let c = Array2::from_shape_fn((m, k), |(i, j)| sqrt_tr * beta[[i, j]] / a[[i, j]]);
    let gamma = Array2::from_shape_fn((m, k), |(i, j)| tr * beta[[i, j]] * beta[[i, j]] / a[[i, j]]);
    let epsilon = Array2::from_shape_fn((m, k), |(i, j)| (beta[[i, j]] - gamma[[i, j]]).max(T::zero()));
    let b = Array1::from_iter(beta.rows().into_iter().map(|r| rho_p * r.sum() + T::one()));
    EstimationStatistics { scheme: CsiScheme::Ideal, c, gamma, epsilon, beta: beta.clone(), a, b, factors: None }
}

/// `Ĝ = c ∘ (Y_p Φ*)`.
pub fn estimate_ideal<T: Real>(
    y_p: &Array2<Complex<T>>,
    pilots: &PilotBook<T>,
    stats: &EstimationStatistics<T>,
) -> CsiEstimate<T> {
    let mut g_hat = project_all(y_p, pilots);
    g_hat.zip_mut_with(&stats.c, |z, &c| *z *= c);
    CsiEstimate { g_hat, scheme: CsiScheme::Ideal }
}

/// Closed-form EQ statistics: `ε^eq = β − (2α − λ)γ`.
pub fn eq_statistics<T: Real>(ideal: &EstimationStatistics<T>, factors: BussgangFactors<T>) -> EstimationStatistics<T> {
    let gain = T::lit(2.0) * factors.alpha - factors.lambda;
    let tiny = T::lit(DEGENERATE_GAMMA);
    let mut epsilon = ideal.beta.clone();
    ndarray::Zip::from(&mut epsilon).and(&ideal.gamma).for_each(|e, &g| {
        if g >= tiny {
            *e = (*e - gain * g).max(T::zero());
        }
    });
    EstimationStatistics {
        scheme: CsiScheme::EstimateAndQuantize,
        epsilon,
        factors: Some(factors),
        ..ideal.clone()
    }
}

/// Quantizes the full-precision LMMSE estimate at the AP. Links with `γ`
/// below [`DEGENERATE_GAMMA`] forward zero.
pub fn estimate_eq<T: Real>(
    y_p: &Array2<Complex<T>>,
    pilots: &PilotBook<T>,
    ideal: &EstimationStatistics<T>,
    quantizer: &Quantizer<T>,
) -> (CsiEstimate<T>, EstimationStatistics<T>) {
    let mut est = estimate_ideal(y_p, pilots, ideal);
    quantize_estimate_in_place(&mut est.g_hat, &ideal.gamma, quantizer);
    est.scheme = CsiScheme::EstimateAndQuantize;
    (est, eq_statistics(ideal, quantizer.factors()))
}

pub(crate) fn quantize_estimate_in_place<T: Real>(g_hat: &mut Array2<Complex<T>>, gamma: &Array2<T>, quantizer: &Quantizer<T>) {
    let tiny = T::lit(DEGENERATE_GAMMA);
    let half = T::lit(0.5);
    ndarray::Zip::from(g_hat).and(gamma).for_each(|z, &g| {
        if g < tiny {
            *z = Complex::new(T::zero(), T::zero());
        } else {
            *z = quantizer.apply_complex(*z, (g * half).sqrt());
        }
    });
}

/// Closed-form QE statistics from the Bussgang model of the pilot quantizer.
pub fn qe_coefficient<T: Real>(ideal: &EstimationStatistics<T>, factors: BussgangFactors<T>) -> EstimationStatistics<T> {
    let (alpha, lambda) = (factors.alpha, factors.lambda);
    let distortion = lambda - alpha * alpha;
    let (m, k) = ideal.c.dim();
    let mut c = ideal.c.clone();
    let mut gamma = ideal.gamma.clone();
    let mut epsilon = ideal.epsilon.clone();
    for i in 0..m {
        let b = ideal.b[i];
        for j in 0..k {
            let a = ideal.a[[i, j]];
            let denom = alpha * alpha * a + distortion * b;
            if denom > T::zero() {
                c[[i, j]] = c[[i, j]] * alpha * a / denom;
                gamma[[i, j]] = gamma[[i, j]] * alpha * alpha * a / denom;
            } else {
                c[[i, j]] = T::zero();
                gamma[[i, j]] = T::zero();
            }
            epsilon[[i, j]] = (ideal.beta[[i, j]] - gamma[[i, j]]).max(T::zero());
        }
    }
    EstimationStatistics {
        scheme: CsiScheme::QuantizeAndEstimate,
        c,
        gamma,
        epsilon,
        factors: Some(factors),
        ..ideal.clone()
    }
}

/// Quantizes the raw pilot block with per-AP scale `√(b_m/2)` and forwards it.
pub fn quantize_pilots<T: Real>(y_p: &Array2<Complex<T>>, b: &Array1<T>, quantizer: &Quantizer<T>) -> Array2<Complex<T>> {
    let mut yq = y_p.clone();
    let half = T::lit(0.5);
    for (mut row, &bm) in yq.rows_mut().into_iter().zip(b.iter()) {
        let sigma = (bm * half).sqrt();
        row.mapv_inplace(|z| quantizer.apply_complex(z, sigma));
    }
    yq
}

/// CPU-side LMMSE estimate from quantized pilots.
pub fn estimate_qe<T: Real>(
    y_p: &Array2<Complex<T>>,
    pilots: &PilotBook<T>,
    ideal: &EstimationStatistics<T>,
    quantizer: &Quantizer<T>,
) -> (CsiEstimate<T>, EstimationStatistics<T>) {
    let stats = qe_coefficient(ideal, quantizer.factors());
    let yq = quantize_pilots(y_p, &ideal.b, quantizer);
    let mut g_hat = project_all(&yq, pilots);
    g_hat.zip_mut_with(&stats.c, |z, &c| *z *= c);
    (CsiEstimate { g_hat, scheme: CsiScheme::QuantizeAndEstimate }, stats)
}

/// Closed-form statistics of any scheme.
pub fn scheme_statistics<T: Real>(
    scheme: CsiScheme,
    ideal: &EstimationStatistics<T>,
    quantizer: &Quantizer<T>,
) -> EstimationStatistics<T> {
    match scheme {
        CsiScheme::Ideal => ideal.clone(),
        CsiScheme::EstimateAndQuantize => eq_statistics(ideal, quantizer.factors()),
        CsiScheme::QuantizeAndEstimate => qe_coefficient(ideal, quantizer.factors()),
    }
}

/// Runs one scheme on a received pilot block.
pub fn estimate<T: Real>(
    scheme: CsiScheme,
    y_p: &Array2<Complex<T>>,
    pilots: &PilotBook<T>,
    ideal: &EstimationStatistics<T>,
    quantizer: &Quantizer<T>,
) -> (CsiEstimate<T>, EstimationStatistics<T>) {
    match scheme {
        CsiScheme::Ideal => (estimate_ideal(y_p, pilots, ideal), ideal.clone()),
        CsiScheme::EstimateAndQuantize => estimate_eq(y_p, pilots, ideal, quantizer),
        CsiScheme::QuantizeAndEstimate => estimate_qe(y_p, pilots, ideal, quantizer),
    }
}

/// Minimum trial count accepted by [`empirical_mse`].
pub const MIN_MSE_TRIALS: usize = 100;

/// Sample mean of `|g_mk − ĝ_mk|²` over independent fading and noise draws
/// at fixed large-scale gains. Deterministic in `seed` for any thread count.
pub fn empirical_mse<T: Real>(
    scheme: CsiScheme,
    net: &NetworkRealization<T>,
    pilots: &PilotBook<T>,
    split: &PowerSplit<T>,
    quantizer: &Quantizer<T>,
    trials: usize,
    seed: u64,
) -> Result<Array2<T>, CsiError> {
    if trials < MIN_MSE_TRIALS {
        return Err(CsiError::TooFewTrials { min: MIN_MSE_TRIALS, got: trials });
    }
    if net.user_count() != pilots.user_count() {
        return Err(CsiError::Shape(format!(
            "{} users in the network, {} pilots",
            net.user_count(),
            pilots.user_count()
        )));
    }
    let ideal = ideal_statistics(&net.beta, pilots, split.rho_p);
    let dim = net.beta.dim();
    let chunks: Vec<Array2<T>> = (0..trials.div_ceil(TRIAL_CHUNK))
        .into_par_iter()
        .map(|chunk| {
            let mut acc = Array2::<T>::zeros(dim);
            for trial in chunk * TRIAL_CHUNK..((chunk + 1) * TRIAL_CHUNK).min(trials) {
                let mut rng = seed_substream(seed, trial as u64, Stage::CsiOracle);
                let h = draw_small_scale::<T, _>(dim.0, dim.1, &mut rng);
                let g = ndarray::Zip::from(&h).and(&net.beta).map_collect(|&z, &b| z * b.sqrt());
                let y_p = receive_pilots(&g, pilots, split.rho_p, &mut rng);
                let (est, _) = estimate(scheme, &y_p, pilots, &ideal, quantizer);
                ndarray::Zip::from(&mut acc).and(&g).and(&est.g_hat).for_each(|s, &g, &gh| *s += (g - gh).norm_sqr());
            }
            acc
        })
        .collect();
    let mut total = Array2::<T>::zeros(dim);
    for c in &chunks {
        total += c;
    }
    let n = T::lit(trials as f64);
    Ok(total.mapv(|v| v / n))
}

/// Monte-Carlo moment estimate of the QE LMMSE coefficient for one link.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MomentCoefficient {
    /// Real part of `E{g r^q*} / E{|r^q|²}`.
    pub coefficient: f64,
    /// Imaginary part, which should vanish.
    pub coefficient_imag: f64,
    pub std_error: f64,
    pub closed_form: f64,
    pub draws: usize,
}

impl MomentCoefficient {
    pub fn relative_error(&self) -> f64 {
        (self.coefficient - self.closed_form).abs() / self.closed_form.abs()
    }
}

/// Brute-force LMMSE coefficient of the QE estimator for link `(m, k)`.
///
/// Only the row of AP `m` is simulated. All quantizers share the same draws.
pub fn qe_moment_coefficients(
    beta_row: &[f64],
    pilots: &PilotBook<f64>,
    rho_p: f64,
    quantizers: &[Quantizer<f64>],
    k: usize,
    draws: usize,
    seed: u64,
) -> Vec<MomentCoefficient> {
    let users = beta_row.len();
    assert_eq!(users, pilots.user_count(), "beta row and pilots disagree");
    assert!(k < users, "user index out of range");
    let tau_p = pilots.tau_p();
    let theta = pilots.theta(rho_p);
    let phi_k: Vec<Complex<f64>> = pilots.sequence(k).iter().map(|z| z.conj()).collect();
    let b_m = rho_p * beta_row.iter().sum::<f64>() + 1.0;
    let sigma = (b_m / 2.0).sqrt();
    let sd: Vec<f64> = beta_row.iter().map(|b| b.sqrt()).collect();
    let nq = quantizers.len();

    // Per quantizer: Σ g r*, Σ |r|², Σ |r|⁴, Σ |g r*|² and Σ Re(g r*)|r|² for the ratio's delta method.
    #[derive(Clone)]
    struct Acc {
        cross: Complex<f64>,
        power: f64,
        power2: f64,
        cross2: f64,
        cross_power: f64,
    }
    let zero = Acc { cross: Complex::new(0.0, 0.0), power: 0.0, power2: 0.0, cross2: 0.0, cross_power: 0.0 };
    let chunk_size = 4096;
    let chunks: Vec<Vec<Acc>> = (0..draws.div_ceil(chunk_size))
        .into_par_iter()
        .map(|chunk| {
            let mut rng = seed_substream(seed, chunk as u64, Stage::MomentOracle);
            let mut acc = vec![zero.clone(); nq];
            let mut g = vec![Complex::new(0.0, 0.0); users];
            let mut y = vec![Complex::new(0.0, 0.0); tau_p];
            for _ in chunk * chunk_size..((chunk + 1) * chunk_size).min(draws) {
                for (gq, &s) in g.iter_mut().zip(&sd) {
                    *gq = f64::complex_normal(&mut rng, 1.0) * s;
                }
                for (i, yi) in y.iter_mut().enumerate() {
                    let mut s = f64::complex_normal(&mut rng, 1.0);
                    for (q, gq) in g.iter().enumerate() {
                        s += theta[[i, q]] * gq;
                    }
                    *yi = s;
                }
                for (qi, quant) in quantizers.iter().enumerate() {
                    let mut r = Complex::new(0.0, 0.0);
                    for (yi, pi) in y.iter().zip(&phi_k) {
                        r += pi * quant.apply_complex(*yi, sigma);
                    }
                    let x = g[k] * r.conj();
                    let p = r.norm_sqr();
                    let a = &mut acc[qi];
                    a.cross += x;
                    a.power += p;
                    a.power2 += p * p;
                    a.cross2 += x.re * x.re;
                    a.cross_power += x.re * p;
                }
            }
            acc
        })
        .collect();
    let mut total = vec![zero; nq];
    for c in &chunks {
        for (t, a) in total.iter_mut().zip(c) {
            t.cross += a.cross;
            t.power += a.power;
            t.power2 += a.power2;
            t.cross2 += a.cross2;
            t.cross_power += a.cross_power;
        }
    }
    let ideal = ideal_statistics(
        &Array2::from_shape_vec((1, users), beta_row.to_vec()).expect("row shape"),
        pilots,
        rho_p,
    );
    let n = draws as f64;
    total
        .iter()
        .zip(quantizers)
        .map(|(t, q)| {
            let (mx, mp) = (t.cross / n, t.power / n);
            let vx = t.cross2 / n - mx.re * mx.re;
            let vp = t.power2 / n - mp * mp;
            let cxp = t.cross_power / n - mx.re * mp;
            let ratio = mx.re / mp;
            let var = (vx - 2.0 * ratio * cxp + ratio * ratio * vp) / (mp * mp * n);
            MomentCoefficient {
                coefficient: ratio,
                coefficient_imag: mx.im / mp,
                std_error: var.max(0.0).sqrt(),
                closed_form: qe_coefficient(&ideal, q.factors()).c[[0, k]],
                draws,
            }
        })
        .collect()
}
