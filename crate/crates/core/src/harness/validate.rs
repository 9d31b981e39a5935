//! Self-check suite: runs every Monte-Carlo oracle against its closed form.
//!
//! Failures are reported as data. Nothing here panics on a failed check.

use ndarray::Array2;
use num_complex::Complex;
use rand::Rng;
use serde::Serialize;

use super::config::SimulationConfig;
use super::seeding::{seed_substream, Stage};
use crate::csi::{
    eq_statistics, empirical_mse, ideal_statistics, make_pilots, qe_coefficient, qe_moment_coefficients, CsiScheme,
    PowerSplit,
};
use crate::detection::{
    lambda_diagonal, symbol_level_sinr, zf_exact_sinr, zf_plain_matrix, zf_whitened_matrix, SymbolLevelSetup,
    ZfFrontEnd,
};
use crate::linalg::{identity_error, matmul};
use crate::propagation::{breakpoint_discontinuity_db, draw_network, GeometryConfig, NetworkRealization};
use crate::quantizer::{empirical_bussgang, sdnr, Levels, Quantizer, QuantizerSpec};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ValidationOptions {
    /// Multiplies the closed-form Bussgang gain in the Bussgang checks (fault injection).
    pub alpha_scale: f64,
    /// Samples per Bussgang Monte-Carlo check.
    pub bussgang_samples: usize,
    /// Draws per moment-oracle link.
    pub moment_draws: usize,
    /// Trials per empirical-MSE check.
    pub mse_trials: usize,
}

impl Default for ValidationOptions {
    fn default() -> Self {
        ValidationOptions { alpha_scale: 1.0, bussgang_samples: 1_000_000, moment_draws: 100_000, mse_trials: 10_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub measured: f64,
    pub tolerance: f64,
    pub detail: String,
}

impl CheckResult {
    fn le(name: impl Into<String>, measured: f64, tolerance: f64, detail: impl Into<String>) -> Self {
        CheckResult { name: name.into(), passed: measured <= tolerance, measured, tolerance, detail: detail.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub seed: u64,
    pub config_hash: String,
    pub checks: Vec<CheckResult>,
    pub passed: usize,
    pub failed: usize,
}

impl ValidationReport {
    pub fn all_passed(&self) -> bool {
        self.failed == 0
    }

    pub fn check(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }
}

const ORACLE_LEVELS: [u32; 4] = [2, 4, 8, 32];

fn max_relative(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x / y - 1.0).abs()).fold(0.0, f64::max)
}

/// Small network for the per-link MSE oracles, drawn with the configured path loss.
fn oracle_network(cfg: &SimulationConfig, users: usize) -> NetworkRealization<f64> {
    let geom = GeometryConfig {
        area_side: cfg.geometry.area_side_km,
        ap_count: 2 * users,
        user_count: users,
        wrap: cfg.geometry.wrap,
    };
    draw_network(&geom, &cfg.path_loss_model(), &mut seed_substream(cfg.seed, 1, Stage::Validation)).expect("valid geometry")
}

pub fn validate(cfg: &SimulationConfig, opts: &ValidationOptions) -> ValidationReport {
    let mut checks = Vec::new();
    let seed = cfg.seed;

    // Bussgang closed forms against Monte Carlo, at the optimal step.
    for (i, &l) in ORACLE_LEVELS.iter().enumerate() {
        let spec = QuantizerSpec::<f64>::optimal(l).expect("valid level");
        let mc = empirical_bussgang(&spec, opts.bussgang_samples, seed.wrapping_add(i as u64));
        let f = spec.factors();
        let za = (f.alpha * opts.alpha_scale - mc.factors.alpha).abs() / mc.alpha_std_error;
        let zl = (f.lambda - mc.factors.lambda).abs() / mc.lambda_std_error;
        checks.push(CheckResult::le(
            format!("bussgang_alpha_L{l}"),
            za,
            4.0,
            format!("closed form {:.6}, Monte Carlo {:.6} (z-score)", f.alpha * opts.alpha_scale, mc.factors.alpha),
        ));
        checks.push(CheckResult::le(
            format!("bussgang_lambda_L{l}"),
            zl,
            4.0,
            format!("closed form {:.6}, Monte Carlo {:.6} (z-score)", f.lambda, mc.factors.lambda),
        ));
    }

    // 1-bit SDNR is independent of the step.
    let flat = sdnr(1.0_f64, 2).expect("valid");
    let dev = (0..=49)
        .map(|i| 0.1 + 0.1 * i as f64)
        .map(|d| (sdnr(d, 2).expect("valid") / flat - 1.0).abs())
        .fold(0.0, f64::max);
    checks.push(CheckResult::le("sdnr_flat_L2", dev, 1e-12, format!("SDNR {flat:.10}")));

    // Optimal step against a dense grid search.
    for &l in &ORACLE_LEVELS[1..] {
        let spec = QuantizerSpec::<f64>::optimal(l).expect("valid level");
        let best = spec.factors().sdnr();
        let grid_best = (1..=6000)
            .map(|i| i as f64 * 1e-3)
            .map(|d| sdnr(d, l).expect("valid"))
            .fold(0.0, f64::max);
        checks.push(CheckResult::le(
            format!("optimal_step_L{l}"),
            (grid_best / best - 1.0).max(0.0),
            1e-9,
            format!("step {:.6}, SDNR {:.6}", spec.step(), best),
        ));
    }

    // Per-link MSE of each scheme on a small network.
    let users = 4;
    let net = oracle_network(cfg, users);
    let pilots = make_pilots::<f64>(users, users).expect("valid pilots");
    let split = PowerSplit::new(cfg.rho(cfg.sweep.mse_power_dbw), cfg.frame.tau_c, users).expect("valid frame");
    let ideal = ideal_statistics(&net.beta, &pilots, split.rho_p);
    let mse = |scheme: CsiScheme, q: &Quantizer<f64>, idx: u64| {
        empirical_mse(scheme, &net, &pilots, &split, q, opts.mse_trials, seed.wrapping_add(idx)).expect("valid oracle")
    };
    let m = mse(CsiScheme::Ideal, &Quantizer::Transparent, 10);
    checks.push(CheckResult::le("mse_ideal", max_relative(&m, &ideal.epsilon), 0.05, "max relative deviation over links"));
    for (i, l) in [2u32, 4].into_iter().enumerate() {
        let q = Quantizer::for_levels(Levels::Finite(l)).expect("valid level");
        let m = mse(CsiScheme::EstimateAndQuantize, &q, 20 + i as u64);
        let eq = eq_statistics(&ideal, q.factors());
        checks.push(CheckResult::le(format!("mse_eq_L{l}"), max_relative(&m, &eq.epsilon), 0.10, "max relative deviation over links"));
        let m = mse(CsiScheme::QuantizeAndEstimate, &q, 30 + i as u64);
        let qe = qe_coefficient(&ideal, q.factors());
        checks.push(CheckResult::le(format!("mse_qe_L{l}"), max_relative(&m, &qe.epsilon), 0.10, "max relative deviation over links"));
    }

    // QE coefficient from Monte-Carlo moments.
    let qs: Vec<Quantizer<f64>> =
        [2, 4, 8].into_iter().map(|l| Quantizer::for_levels(Levels::Finite(l)).expect("valid level")).collect();
    let single = make_pilots::<f64>(1, 1).expect("valid pilots");
    let scalar = qe_moment_coefficients(&[1e-12], &single, 1e12, &qs, 0, opts.moment_draws, seed.wrapping_add(40));
    for (r, l) in scalar.iter().zip([2, 4, 8]) {
        checks.push(CheckResult::le(
            format!("qe_coefficient_scalar_L{l}"),
            r.relative_error(),
            0.02,
            format!("single pilot symbol: Monte Carlo {:.6e}, closed form {:.6e}", r.coefficient, r.closed_form),
        ));
    }
    let big = draw_network(&cfg.geometry_config(), &cfg.path_loss_model(), &mut seed_substream(seed, 2, Stage::Validation))
        .expect("valid geometry");
    let pilots_big = make_pilots::<f64>(cfg.frame.tau_p, cfg.geometry.user_count).expect("valid pilots");
    let split_big = cfg.power_split(cfg.sweep.mse_power_dbw);
    let mut rng = seed_substream(seed, 3, Stage::Validation);
    let links: Vec<(usize, usize)> =
        (0..10).map(|_| (rng.random_range(0..big.ap_count()), rng.random_range(0..big.user_count()))).collect();
    let mut worst = [0.0f64; 3];
    for (i, &(m, k)) in links.iter().enumerate() {
        let row: Vec<f64> = big.beta.row(m).to_vec();
        let res = qe_moment_coefficients(&row, &pilots_big, split_big.rho_p, &qs, k, opts.moment_draws, seed.wrapping_add(50 + i as u64));
        for (w, r) in worst.iter_mut().zip(&res) {
            *w = w.max(r.relative_error());
        }
    }
    for (w, l) in worst.iter().zip([2, 4, 8]) {
        checks.push(CheckResult::le(
            format!("qe_coefficient_links_L{l}"),
            *w,
            0.02,
            "max relative error over 10 random links of the configured network",
        ));
    }

    // Symbol-level SINR of whitened ZF against the closed form.
    {
        let mut rng = seed_substream(seed, 4, Stage::Validation);
        let (m, k) = (48, 8);
        let beta = Array2::from_shape_fn((m, k), |(i, j)| 10f64.powf(-(((i + 2 * j) % 4) as f64) * 0.5));
        let gamma = beta.mapv(|b| 0.9 * b);
        let epsilon = &beta - &gamma;
        let g_hat = gamma.mapv(|g| f64::complex_normal(&mut rng, g));
        let sums: Vec<f64> = beta.rows().into_iter().map(|r| r.sum()).collect();
        let q = Quantizer::for_levels(Levels::Finite(32)).expect("valid level");
        let f = q.factors();
        let noise = lambda_diagonal(&epsilon, &beta, 0.2, f).expect("positive noise");
        let exact = zf_exact_sinr(&g_hat, noise.as_slice(), 0.2, f.alpha, ZfFrontEnd::Whitened).expect("full rank");
        let setup = SymbolLevelSetup {
            g_hat: &g_hat,
            epsilon: &epsilon,
            beta_row_sums: &sums,
            lambda: noise.as_slice(),
            rho_u: 0.2,
            quantizer: &q,
        };
        let emp = symbol_level_sinr(&setup, 100_000, &mut rng).expect("full rank");
        let dev = exact.iter().zip(&emp).map(|(a, b)| (a / b - 1.0).abs()).fold(0.0, f64::max);
        checks.push(CheckResult::le("symbol_level_sinr_L32", dev, 0.10, "max relative deviation over users"));
    }

    // Structural identities.
    {
        let mut rng = seed_substream(seed, 5, Stage::Validation);
        let mut worst = 0.0f64;
        for _ in 0..100 {
            let g = Array2::from_shape_fn((12, 4), |_| f64::complex_normal(&mut rng, 1.0));
            let lambda: Vec<f64> = (0..12).map(|_| 0.2 + 5.0 * rng.random::<f64>()).collect();
            let a = zf_plain_matrix(&g).expect("full rank");
            let w = zf_whitened_matrix(&g, &lambda).expect("full rank");
            worst = worst.max(identity_error(matmul(a.view(), g.view()).view()));
            worst = worst.max(identity_error(matmul(w.view(), g.view()).view()));
        }
        checks.push(CheckResult::le("zf_identities", worst, 1e-10, "Frobenius error over 100 instances"));
        let gaps = breakpoint_discontinuity_db(&cfg.path_loss_model());
        checks.push(CheckResult::le("path_loss_continuity", gaps[0].max(gaps[1]), 1e-12, "dB jump at the breakpoints"));
        let rho_p = split_big.rho_p;
        let th = pilots_big.theta(rho_p);
        let tt = th.t().mapv(|z| z.conj()).dot(&th);
        let scale = cfg.frame.tau_p as f64 * rho_p;
        let dev = tt
            .indexed_iter()
            .map(|((i, j), z)| (z - Complex::new(if i == j { scale } else { 0.0 }, 0.0)).norm() / scale)
            .fold(0.0, f64::max);
        checks.push(CheckResult::le("pilot_gram", dev, 1e-10, "relative deviation of the scaled pilot Gram matrix"));
    }

    let passed = checks.iter().filter(|c| c.passed).count();
    ValidationReport { seed, config_hash: cfg.hash_hex(), failed: checks.len() - passed, passed, checks }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick() -> ValidationOptions {
        ValidationOptions { bussgang_samples: 200_000, moment_draws: 20_000, mse_trials: 2_000, ..Default::default() }
    }

    fn small_config(seed: u64) -> SimulationConfig {
        let mut cfg = SimulationConfig::default();
        cfg.seed = seed;
        cfg.geometry.ap_count = 40;
        cfg.geometry.user_count = 8;
        cfg.frame.tau_p = 8;
        cfg
    }

    #[test]
    fn fault_injection_trips_bussgang_checks() {
        let opts = ValidationOptions { alpha_scale: 1.1, ..quick() };
        let r = validate(&small_config(1), &opts);
        for l in ORACLE_LEVELS {
            assert!(!r.check(&format!("bussgang_alpha_L{l}")).unwrap().passed);
            assert!(r.check(&format!("bussgang_lambda_L{l}")).unwrap().passed);
        }
        let clean = validate(&small_config(1), &quick());
        for l in ORACLE_LEVELS {
            assert!(clean.check(&format!("bussgang_alpha_L{l}")).unwrap().passed);
        }
    }

    #[test]
    fn deterministic_checks_pass() {
        let r = validate(&small_config(2), &quick());
        for name in ["sdnr_flat_L2", "optimal_step_L4", "optimal_step_L32", "zf_identities", "path_loss_continuity", "pilot_gram"] {
            assert!(r.check(name).unwrap().passed, "{name}: {:?}", r.check(name));
        }
        assert_eq!(r.passed + r.failed, r.checks.len());
    }
}
