//! Monte-Carlo experiment drivers.
//!
//! Both experiments use two nested loops: an outer loop over geometry and
//! shadowing realizations, run in parallel, and an inner loop over
//! small-scale fading and noise. Within one fading trial the same channel and
//! noise draws are reused for every scheme, level and transmit power.

use std::fmt;
use std::time::Instant;

use ndarray::{Array1, Array2, Zip};
use num_complex::Complex;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::config::{ConfigError, SimulationConfig};
use super::seeding::{nested_index, seed_substream, Stage};
use crate::csi::{
    eq_statistics, ideal_statistics, make_pilots, project_all, qe_coefficient, quantize_estimate_in_place,
    quantize_pilots, CsiScheme, EstimationStatistics, PilotBook,
};
use crate::detection::{
    lambda_diagonal, mrc_conditional_sinr, net_throughput, user_rate, zf_approx_sinr, zf_exact_sinr, ZfFrontEnd,
    SINR_CEILING,
};
use crate::propagation::{draw_network, draw_small_scale, NetworkRealization};
use crate::quantizer::{Levels, Quantizer, QuantizerSpec};
use crate::scalar::to_db;

type C64 = Complex<f64>;

/// Wall-clock time spent in one stage.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

fn timed<R>(timings: &mut Vec<StageTiming>, stage: &str, f: impl FnOnce() -> R) -> R {
    let t = Instant::now();
    let out = f();
    timings.push(StageTiming { stage: stage.to_string(), seconds: t.elapsed().as_secs_f64() });
    out
}

/// Geometry realization `index` of the configured network.
pub fn draw_geometry(cfg: &SimulationConfig, index: usize) -> NetworkRealization<f64> {
    let mut rng = seed_substream(cfg.seed, index as u64, Stage::Geometry);
    draw_network(&cfg.geometry_config(), &cfg.path_loss_model(), &mut rng).expect("validated geometry")
}

/// Channel and pilot-noise draws of one fading trial, reusable at any power.
struct TrialDraw {
    g: Array2<C64>,
    /// `G Φᵀ`, the noiseless pilot block at unit amplitude.
    g_phi: Array2<C64>,
    noise: Array2<C64>,
    /// `N Φ*`, the pilot noise seen by each projection.
    noise_proj: Array2<C64>,
}

impl TrialDraw {
    fn new<R: Rng + ?Sized>(net: &NetworkRealization<f64>, pilots: &PilotBook<f64>, rng: &mut R) -> Self {
        let (m, k) = net.beta.dim();
        let h = draw_small_scale::<f64, _>(m, k, rng);
        let g = Zip::from(&h).and(&net.beta).map_collect(|&z, &b| z * b.sqrt());
        let noise = draw_small_scale::<f64, _>(m, pilots.tau_p(), rng);
        let g_phi = g.dot(&pilots.sequences().t());
        let noise_proj = project_all(&noise, pilots);
        TrialDraw { g, g_phi, noise, noise_proj }
    }

    /// `Y_p = √(τ_pρ_p) G Φᵀ + N`.
    fn pilot_block(&self, amplitude: f64) -> Array2<C64> {
        let mut y = self.noise.clone();
        y.zip_mut_with(&self.g_phi, |y, &g| *y += g * amplitude);
        y
    }

    /// `Y_p Φ* = √(τ_pρ_p) G + N Φ*`, using the orthonormality of the pilots.
    fn projection(&self, amplitude: f64) -> Array2<C64> {
        let mut r = self.noise_proj.clone();
        r.zip_mut_with(&self.g, |r, &g| *r += g * amplitude);
        r
    }
}

fn scale_by(mut z: Array2<C64>, c: &Array2<f64>) -> Array2<C64> {
    z.zip_mut_with(c, |z, &c| *z *= c);
    z
}

/// CSI estimate of one scheme from a trial's pilot observations.
struct PilotObservation<'a> {
    pilots: &'a PilotBook<f64>,
    ideal: &'a EstimationStatistics<f64>,
    block: Option<Array2<C64>>,
    projection: Array2<C64>,
    draw: &'a TrialDraw,
    amplitude: f64,
}

impl<'a> PilotObservation<'a> {
    fn new(draw: &'a TrialDraw, pilots: &'a PilotBook<f64>, ideal: &'a EstimationStatistics<f64>, amplitude: f64) -> Self {
        PilotObservation { pilots, ideal, block: None, projection: draw.projection(amplitude), draw, amplitude }
    }

    fn estimate(&mut self, scheme: CsiScheme, quantizer: &Quantizer<f64>, stats: &EstimationStatistics<f64>) -> Array2<C64> {
        match (scheme, quantizer) {
            (CsiScheme::Ideal, _) | (_, Quantizer::Transparent) => scale_by(self.projection.clone(), &self.ideal.c),
            (CsiScheme::EstimateAndQuantize, q) => {
                let mut g_hat = scale_by(self.projection.clone(), &self.ideal.c);
                quantize_estimate_in_place(&mut g_hat, &self.ideal.gamma, q);
                g_hat
            }
            (CsiScheme::QuantizeAndEstimate, q) => {
                let amplitude = self.amplitude;
                let block = self.block.get_or_insert_with(|| self.draw.pilot_block(amplitude));
                let yq = quantize_pilots(block, &self.ideal.b, q);
                scale_by(project_all(&yq, self.pilots), &stats.c)
            }
        }
    }
}

fn closed_form(scheme: CsiScheme, ideal: &EstimationStatistics<f64>, q: &Quantizer<f64>) -> EstimationStatistics<f64> {
    match scheme {
        CsiScheme::Ideal => ideal.clone(),
        CsiScheme::EstimateAndQuantize => eq_statistics(ideal, q.factors()),
        CsiScheme::QuantizeAndEstimate => qe_coefficient(ideal, q.factors()),
    }
}

/// Two-sample Kolmogorov–Smirnov distance between sorted samples.
pub fn ks_distance(a: &[f64], b: &[f64]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return 1.0;
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

fn sort_samples(v: &mut [f64]) {
    v.sort_by(|a, b| a.total_cmp(b));
}

/// Quantile of sorted data by linear interpolation.
pub fn quantile_sorted(v: &[f64], p: f64) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let pos = p.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let w = pos - lo as f64;
    v[lo] * (1.0 - w) + v[hi] * w
}

/// `(value, cumulative probability)` pairs at `points` evenly spaced ranks.
pub fn downsample_cdf(sorted: &[f64], points: usize) -> Vec<(f64, f64)> {
    let n = sorted.len();
    if n == 0 {
        return Vec::new();
    }
    let points = points.min(n).max(1);
    (0..points)
        .map(|i| {
            let idx = if points == 1 { n - 1 } else { i * (n - 1) / (points - 1) };
            (sorted[idx], (idx + 1) as f64 / n as f64)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MseCurve {
    pub scheme: CsiScheme,
    pub levels: Levels,
    /// Closed-form per-link MSE over all links and geometries, sorted.
    pub analytic: Vec<f64>,
    /// Monte-Carlo per-link MSE of the same links, sorted.
    pub empirical: Vec<f64>,
    pub ks_distance: f64,
}

/// QE versus EQ comparison of the closed-form MSE at one level.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SchemeComparison {
    pub levels: Levels,
    /// Fraction of links with `ε^qe > ε^eq`.
    pub qe_worse_fraction: f64,
    /// Largest `p` such that the QE quantile exceeds the EQ quantile at every
    /// probability up to `p` (on a 1000-point grid).
    pub qe_worse_lower_mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MseCdfResult {
    pub power_dbw: f64,
    pub geometries: usize,
    pub fading_trials: usize,
    /// Closed-form MSE with ideal fronthaul, sorted.
    pub ideal: Vec<f64>,
    pub curves: Vec<MseCurve>,
    pub comparisons: Vec<SchemeComparison>,
    pub timings: Vec<StageTiming>,
}

impl MseCdfResult {
    pub fn curve(&self, scheme: CsiScheme, levels: Levels) -> Option<&MseCurve> {
        self.curves.iter().find(|c| c.scheme == scheme && c.levels == levels)
    }
}

fn quantizers(cfg: &SimulationConfig) -> Vec<(Levels, Quantizer<f64>)> {
    cfg.levels()
        .into_iter()
        .map(|l| (l, Quantizer::for_levels(l).expect("validated levels")))
        .collect()
}

/// Closed-form and Monte-Carlo CSI MSE for every configured scheme and level.
pub fn run_mse_cdf(cfg: &SimulationConfig) -> Result<MseCdfResult, ConfigError> {
    cfg.validate()?;
    let mut timings = Vec::new();
    let pilots = make_pilots::<f64>(cfg.frame.tau_p, cfg.geometry.user_count).expect("validated pilots");
    let split = cfg.power_split(cfg.sweep.mse_power_dbw);
    let amplitude = (cfg.frame.tau_p as f64 * split.rho_p).sqrt();
    let qs = quantizers(cfg);
    let schemes = cfg.quantized_schemes();
    let keys: Vec<(CsiScheme, Levels, Quantizer<f64>)> =
        qs.iter().flat_map(|&(l, q)| schemes.iter().map(move |&s| (s, l, q))).collect();
    let trials = cfg.trials.fading;

    struct GeometryOutput {
        ideal: Vec<f64>,
        analytic: Vec<Vec<f64>>,
        empirical: Vec<Vec<f64>>,
    }

    let per_geometry: Vec<GeometryOutput> = timed(&mut timings, "mse_monte_carlo", || {
        (0..cfg.trials.geometry)
            .into_par_iter()
            .map(|gi| {
                let net = draw_geometry(cfg, gi);
                let ideal = ideal_statistics(&net.beta, &pilots, split.rho_p);
                let stats: Vec<_> = keys.iter().map(|(s, _, q)| closed_form(*s, &ideal, q)).collect();
                let mut acc: Vec<Array2<f64>> = keys.iter().map(|_| Array2::zeros(net.beta.dim())).collect();
                for t in 0..trials {
                    let mut rng = seed_substream(cfg.seed, nested_index(gi, t), Stage::Fading);
                    let draw = TrialDraw::new(&net, &pilots, &mut rng);
                    let mut obs = PilotObservation::new(&draw, &pilots, &ideal, amplitude);
                    for ((&(scheme, _, q), st), a) in keys.iter().zip(&stats).zip(acc.iter_mut()) {
                        let g_hat = obs.estimate(scheme, &q, st);
                        Zip::from(a).and(&draw.g).and(&g_hat).for_each(|a, &g, &gh| *a += (g - gh).norm_sqr());
                    }
                }
                let n = trials as f64;
                GeometryOutput {
                    ideal: ideal.epsilon.iter().copied().collect(),
                    analytic: stats.iter().map(|s| s.epsilon.iter().copied().collect()).collect(),
                    empirical: acc.iter().map(|a| a.iter().map(|v| v / n).collect()).collect(),
                }
            })
            .collect()
    });

    let (curves, mut ideal_all, comparisons) = timed(&mut timings, "mse_aggregate", || {
        let mut ideal_all: Vec<f64> = per_geometry.iter().flat_map(|g| g.ideal.iter().copied()).collect();
        sort_samples(&mut ideal_all);
        // Unsorted analytic samples, kept link-aligned for the EQ/QE comparison.
        let aligned: Vec<Vec<f64>> = (0..keys.len())
            .map(|ci| per_geometry.iter().flat_map(|g| g.analytic[ci].iter().copied()).collect())
            .collect();
        let mut comparisons = Vec::new();
        for &(l, _) in &qs {
            let find = |s: CsiScheme| keys.iter().position(|&(ks, kl, _)| ks == s && kl == l);
            if let (Some(e), Some(q)) = (find(CsiScheme::EstimateAndQuantize), find(CsiScheme::QuantizeAndEstimate)) {
                let worse = aligned[q].iter().zip(&aligned[e]).filter(|(a, b)| a > b).count();
                let mut se = aligned[e].clone();
                let mut sq = aligned[q].clone();
                sort_samples(&mut se);
                sort_samples(&mut sq);
                let mut lower = 0.0;
                for i in 1..=1000 {
                    let p = i as f64 / 1000.0;
                    if quantile_sorted(&sq, p) > quantile_sorted(&se, p) {
                        lower = p;
                    } else {
                        break;
                    }
                }
                comparisons.push(SchemeComparison {
                    levels: l,
                    qe_worse_fraction: worse as f64 / aligned[q].len() as f64,
                    qe_worse_lower_mass: lower,
                });
            }
        }
        let curves: Vec<MseCurve> = keys
            .iter()
            .enumerate()
            .zip(aligned)
            .map(|((ci, &(scheme, levels, _)), mut analytic)| {
                let mut empirical: Vec<f64> = per_geometry.iter().flat_map(|g| g.empirical[ci].iter().copied()).collect();
                sort_samples(&mut analytic);
                sort_samples(&mut empirical);
                let ks = ks_distance(&analytic, &empirical);
                MseCurve { scheme, levels, analytic, empirical, ks_distance: ks }
            })
            .collect();
        (curves, ideal_all, comparisons)
    });
    ideal_all.shrink_to_fit();
    Ok(MseCdfResult {
        power_dbw: cfg.sweep.mse_power_dbw,
        geometries: cfg.trials.geometry,
        fading_trials: trials,
        ideal: ideal_all,
        curves,
        comparisons,
        timings,
    })
}

/// Receiver curve in the throughput sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Receiver {
    /// Zero-forcing with unquantized fronthaul.
    ZfIdeal,
    /// Zero-forcing with quantized fronthaul and the given CSI scheme.
    Zf(CsiScheme),
    /// Local-CSI MRC with unquantized fronthaul and perfect CSI.
    Mrc,
}

impl fmt::Display for Receiver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Receiver::ZfIdeal => f.write_str("zf-ideal"),
            Receiver::Zf(s) => write!(f, "{s}"),
            Receiver::Mrc => f.write_str("mrc"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub receiver: Receiver,
    pub levels: Levels,
    pub power_dbw: f64,
    /// Mean per-user net throughput, bits/s, from the approximate SINR.
    pub user_mean_throughput_bps: f64,
    /// 95% normal-approximation half width over geometry realizations.
    pub ci_half_width_bps: f64,
    /// Median over users and geometries of the per-user fading-averaged throughput.
    pub median_throughput_bps: f64,
    pub mean_rate_bits_per_symbol: f64,
    /// Same as `user_mean_throughput_bps` with the exact whitened ZF SINR.
    pub exact_user_mean_throughput_bps: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThroughputResult {
    pub geometries: usize,
    pub fading_trials: usize,
    pub rows: Vec<SweepRow>,
    /// Exact-SINR evaluations that failed because an estimate was rank deficient.
    pub rank_deficient_events: usize,
    pub timings: Vec<StageTiming>,
}

impl ThroughputResult {
    /// Rows of one curve, in power order.
    pub fn curve(&self, receiver: Receiver, levels: Levels) -> Vec<&SweepRow> {
        self.rows.iter().filter(|r| r.receiver == receiver && r.levels == levels).collect()
    }

    pub fn value(&self, receiver: Receiver, levels: Levels, power_dbw: f64) -> Option<f64> {
        self.curve(receiver, levels)
            .into_iter()
            .find(|r| (r.power_dbw - power_dbw).abs() < 1e-9)
            .map(|r| r.user_mean_throughput_bps)
    }
}

/// Interpolated power at which `values` first reaches `target`.
pub fn crossing_power(powers: &[f64], values: &[f64], target: f64) -> Option<f64> {
    let i = values.iter().position(|&v| v >= target)?;
    if i == 0 {
        return if values[0] == target { Some(powers[0]) } else { None };
    }
    let (p0, p1, v0, v1) = (powers[i - 1], powers[i], values[i - 1], values[i]);
    Some(p0 + (target - v0) / (v1 - v0) * (p1 - p0))
}

/// Power offset in dB between two curves at a common throughput level.
pub fn throughput_gap_db(result: &ThroughputResult, reference: (Receiver, Levels), other: (Receiver, Levels), target_bps: f64) -> Option<f64> {
    let extract = |(r, l): (Receiver, Levels)| -> (Vec<f64>, Vec<f64>) {
        let rows = result.curve(r, l);
        (rows.iter().map(|x| x.power_dbw).collect(), rows.iter().map(|x| x.user_mean_throughput_bps).collect())
    };
    let (pa, va) = extract(reference);
    let (pb, vb) = extract(other);
    Some(crossing_power(&pb, &vb, target_bps)? - crossing_power(&pa, &va, target_bps)?)
}

struct CurveSetup {
    receiver: Receiver,
    levels: Levels,
    quantizer: Quantizer<f64>,
}

/// Per-user net throughput versus transmit power for ZF with each fronthaul
/// configuration, unquantized ZF and the MRC baseline.
pub fn run_throughput_sweep(cfg: &SimulationConfig) -> Result<ThroughputResult, ConfigError> {
    cfg.validate()?;
    let mut timings = Vec::new();
    let pilots = make_pilots::<f64>(cfg.frame.tau_p, cfg.geometry.user_count).expect("validated pilots");
    let powers = cfg.sweep.powers_dbw.0.clone();
    let splits: Vec<_> = powers.iter().map(|&p| cfg.power_split(p)).collect();
    let mut curves = vec![CurveSetup { receiver: Receiver::ZfIdeal, levels: Levels::Infinite, quantizer: Quantizer::Transparent }];
    for (l, q) in quantizers(cfg) {
        for s in cfg.quantized_schemes() {
            curves.push(CurveSetup { receiver: Receiver::Zf(s), levels: l, quantizer: q });
        }
    }
    curves.push(CurveSetup { receiver: Receiver::Mrc, levels: Levels::Infinite, quantizer: Quantizer::Transparent });
    let (nc, np, k) = (curves.len(), powers.len(), cfg.geometry.user_count);
    let trials = cfg.trials.fading;
    let exact = cfg.output.exact_sinr;
    let throughput = |rate: f64| {
        net_throughput(cfg.link.bandwidth_hz, cfg.frame.tau_p, cfg.frame.tau_c, rate).expect("validated frame")
    };

    struct GeometryOutput {
        /// `[curve][power][user]` fading-averaged throughput and rate.
        throughput: Vec<Vec<Vec<f64>>>,
        rate: Vec<Vec<Vec<f64>>>,
        exact: Vec<Vec<Vec<f64>>>,
        rank_deficient: usize,
    }

    let per_geometry: Vec<GeometryOutput> = timed(&mut timings, "sweep_monte_carlo", || {
        (0..cfg.trials.geometry)
            .into_par_iter()
            .map(|gi| {
                let net = draw_geometry(cfg, gi);
                // Closed-form statistics and Λ for every (power, curve).
                let ideal: Vec<_> = splits.iter().map(|s| ideal_statistics(&net.beta, &pilots, s.rho_p)).collect();
                let setups: Vec<Vec<Option<(EstimationStatistics<f64>, Array1<f64>)>>> = splits
                    .iter()
                    .zip(&ideal)
                    .map(|(split, id)| {
                        curves
                            .iter()
                            .map(|c| {
                                let scheme = match c.receiver {
                                    Receiver::ZfIdeal => CsiScheme::Ideal,
                                    Receiver::Zf(s) => s,
                                    Receiver::Mrc => return None,
                                };
                                let stats = closed_form(scheme, id, &c.quantizer);
                                let noise = lambda_diagonal(&stats.epsilon, &net.beta, split.rho_u, c.quantizer.factors())
                                    .expect("positive effective noise");
                                Some((stats, noise.lambda))
                            })
                            .collect()
                    })
                    .collect();
                let zeros = || vec![vec![vec![0.0; k]; np]; nc];
                let (mut tp, mut rt, mut ex) = (zeros(), zeros(), zeros());
                let mut rank_deficient = 0;
                for t in 0..trials {
                    let mut rng = seed_substream(cfg.seed, nested_index(gi, t), Stage::Fading);
                    let draw = TrialDraw::new(&net, &pilots, &mut rng);
                    for (pi, split) in splits.iter().enumerate() {
                        let amplitude = (cfg.frame.tau_p as f64 * split.rho_p).sqrt();
                        let mut obs = PilotObservation::new(&draw, &pilots, &ideal[pi], amplitude);
                        let mut ideal_hat: Option<Array2<C64>> = None;
                        for (ci, c) in curves.iter().enumerate() {
                            let sinr: Vec<f64>;
                            let mut exact_sinr = None;
                            match (&setups[pi][ci], c.receiver) {
                                (_, Receiver::Mrc) => {
                                    sinr = mrc_conditional_sinr(&draw.g, split.rho_u, SINR_CEILING);
                                }
                                (Some((stats, lambda)), receiver) => {
                                    let scheme = match receiver {
                                        Receiver::Zf(s) => s,
                                        _ => CsiScheme::Ideal,
                                    };
                                    let transparent = matches!(c.quantizer, Quantizer::Transparent);
                                    let g_hat = if transparent {
                                        ideal_hat
                                            .get_or_insert_with(|| obs.estimate(CsiScheme::Ideal, &c.quantizer, stats))
                                            .clone()
                                    } else {
                                        obs.estimate(scheme, &c.quantizer, stats)
                                    };
                                    let alpha = c.quantizer.factors().alpha;
                                    let l = lambda.as_slice().expect("contiguous");
                                    sinr = zf_approx_sinr(&g_hat, l, split.rho_u, alpha).expect("validated dimensions");
                                    if exact {
                                        match zf_exact_sinr(&g_hat, l, split.rho_u, alpha, ZfFrontEnd::Whitened) {
                                            Ok(s) => exact_sinr = Some(s),
                                            Err(_) => rank_deficient += 1,
                                        }
                                    }
                                }
                                (None, _) => unreachable!("only MRC has no CSI setup"),
                            }
                            for (u, &s) in sinr.iter().enumerate() {
                                let r = user_rate(s).expect("nonnegative SINR");
                                rt[ci][pi][u] += r;
                                tp[ci][pi][u] += throughput(r);
                            }
                            if let Some(es) = exact_sinr {
                                for (u, &s) in es.iter().enumerate() {
                                    ex[ci][pi][u] += throughput(user_rate(s.max(0.0)).expect("nonnegative SINR"));
                                }
                            }
                        }
                    }
                }
                let n = trials as f64;
                for arr in [&mut tp, &mut rt, &mut ex] {
                    arr.iter_mut().flatten().flatten().for_each(|v| *v /= n);
                }
                GeometryOutput { throughput: tp, rate: rt, exact: ex, rank_deficient }
            })
            .collect()
    });

    let rows = timed(&mut timings, "sweep_aggregate", || {
        let ng = per_geometry.len() as f64;
        let mut rows = Vec::new();
        for (ci, c) in curves.iter().enumerate() {
            for (pi, &p) in powers.iter().enumerate() {
                let geo_means: Vec<f64> =
                    per_geometry.iter().map(|g| g.throughput[ci][pi].iter().sum::<f64>() / k as f64).collect();
                let mean = geo_means.iter().sum::<f64>() / ng;
                let var = if geo_means.len() > 1 {
                    geo_means.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (ng - 1.0)
                } else {
                    0.0
                };
                let mut users: Vec<f64> = per_geometry.iter().flat_map(|g| g.throughput[ci][pi].iter().copied()).collect();
                sort_samples(&mut users);
                let rate = per_geometry.iter().map(|g| g.rate[ci][pi].iter().sum::<f64>()).sum::<f64>() / (ng * k as f64);
                let exact_mean = (exact && c.receiver != Receiver::Mrc).then(|| {
                    per_geometry.iter().map(|g| g.exact[ci][pi].iter().sum::<f64>()).sum::<f64>() / (ng * k as f64)
                });
                rows.push(SweepRow {
                    receiver: c.receiver,
                    levels: c.levels,
                    power_dbw: p,
                    user_mean_throughput_bps: mean,
                    ci_half_width_bps: 1.96 * (var / ng).sqrt(),
                    median_throughput_bps: quantile_sorted(&users, 0.5),
                    mean_rate_bits_per_symbol: rate,
                    exact_user_mean_throughput_bps: exact_mean,
                });
            }
        }
        rows
    });
    Ok(ThroughputResult {
        geometries: cfg.trials.geometry,
        fading_trials: trials,
        rank_deficient_events: per_geometry.iter().map(|g| g.rank_deficient).sum(),
        rows,
        timings,
    })
}

/// Approximate-versus-exact rate deviation for one scheme and level.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SinrDeviation {
    pub scheme: CsiScheme,
    pub levels: Levels,
    pub power_dbw: f64,
    /// Median over users and realizations of `|R_approx − R_exact| / R_exact`
    /// with the whitened ZF detector.
    pub median_relative_deviation: f64,
    /// Same against ZF without whitening.
    pub median_relative_deviation_plain: f64,
    pub samples: usize,
}

/// Compares the approximate ZF SINR against the exact one per realization.
pub fn run_sinr_deviation(cfg: &SimulationConfig, power_dbw: f64) -> Result<Vec<SinrDeviation>, ConfigError> {
    cfg.validate()?;
    let pilots = make_pilots::<f64>(cfg.frame.tau_p, cfg.geometry.user_count).expect("validated pilots");
    let split = cfg.power_split(power_dbw);
    let amplitude = (cfg.frame.tau_p as f64 * split.rho_p).sqrt();
    let keys: Vec<(CsiScheme, Levels, Quantizer<f64>)> = quantizers(cfg)
        .into_iter()
        .flat_map(|(l, q)| cfg.quantized_schemes().into_iter().map(move |s| (s, l, q)))
        .collect();
    let per_geometry: Vec<Vec<(Vec<f64>, Vec<f64>)>> = (0..cfg.trials.geometry)
        .into_par_iter()
        .map(|gi| {
            let net = draw_geometry(cfg, gi);
            let ideal = ideal_statistics(&net.beta, &pilots, split.rho_p);
            let setups: Vec<_> = keys
                .iter()
                .map(|(s, _, q)| {
                    let stats = closed_form(*s, &ideal, q);
                    let lambda = lambda_diagonal(&stats.epsilon, &net.beta, split.rho_u, q.factors()).expect("positive noise").lambda;
                    (stats, lambda)
                })
                .collect();
            let mut out = vec![(Vec::new(), Vec::new()); keys.len()];
            for t in 0..cfg.trials.fading {
                let mut rng = seed_substream(cfg.seed, nested_index(gi, t), Stage::Fading);
                let draw = TrialDraw::new(&net, &pilots, &mut rng);
                let mut obs = PilotObservation::new(&draw, &pilots, &ideal, amplitude);
                for (((s, _, q), (stats, lambda)), o) in keys.iter().zip(&setups).zip(out.iter_mut()) {
                    let g_hat = obs.estimate(*s, q, stats);
                    let l = lambda.as_slice().expect("contiguous");
                    let alpha = q.factors().alpha;
                    let approx = zf_approx_sinr(&g_hat, l, split.rho_u, alpha).expect("dimensions");
                    let (Ok(w), Ok(p)) = (
                        zf_exact_sinr(&g_hat, l, split.rho_u, alpha, ZfFrontEnd::Whitened),
                        zf_exact_sinr(&g_hat, l, split.rho_u, alpha, ZfFrontEnd::Plain),
                    ) else {
                        continue;
                    };
                    for u in 0..approx.len() {
                        let ra = approx[u].ln_1p();
                        let (rw, rp) = (w[u].ln_1p(), p[u].ln_1p());
                        o.0.push((ra - rw).abs() / rw);
                        o.1.push((ra - rp).abs() / rp);
                    }
                }
            }
            out
        })
        .collect();
    Ok(keys
        .iter()
        .enumerate()
        .map(|(ci, &(scheme, levels, _))| {
            let mut w: Vec<f64> = per_geometry.iter().flat_map(|g| g[ci].0.iter().copied()).collect();
            let mut p: Vec<f64> = per_geometry.iter().flat_map(|g| g[ci].1.iter().copied()).collect();
            sort_samples(&mut w);
            sort_samples(&mut p);
            SinrDeviation {
                scheme,
                levels,
                power_dbw,
                median_relative_deviation: quantile_sorted(&w, 0.5),
                median_relative_deviation_plain: quantile_sorted(&p, 0.5),
                samples: w.len(),
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuantizerRow {
    pub levels: Levels,
    pub bits: f64,
    /// `None` for the infinite-resolution row.
    pub step: Option<f64>,
    pub alpha: f64,
    pub lambda: f64,
    pub sdnr_linear: f64,
    pub sdnr_db: f64,
}

/// Optimal step, Bussgang factors and SDNR for each level count.
pub fn run_quantizer_table(levels: &[Levels]) -> Result<Vec<QuantizerRow>, ConfigError> {
    levels
        .iter()
        .map(|&l| match l {
            Levels::Finite(n) => {
                let spec = QuantizerSpec::<f64>::optimal(n).map_err(|e| ConfigError::Invalid(e.to_string()))?;
                let f = spec.factors();
                Ok(QuantizerRow {
                    levels: l,
                    bits: spec.bits(),
                    step: Some(spec.step()),
                    alpha: f.alpha,
                    lambda: f.lambda,
                    sdnr_linear: f.sdnr(),
                    sdnr_db: to_db(f.sdnr()),
                })
            }
            Levels::Infinite => Ok(QuantizerRow {
                levels: l,
                bits: f64::INFINITY,
                step: None,
                alpha: 1.0,
                lambda: 1.0,
                sdnr_linear: f64::INFINITY,
                sdnr_db: f64::INFINITY,
            }),
        })
        .collect()
}
