//! Simulation configuration, loaded from TOML.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::csi::{CsiScheme, PowerSplit};
use crate::propagation::{dbw_to_watt, noise_power, normalized_snr, GeometryConfig, PathLossModel};
use crate::quantizer::{Levels, Quantizer};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometrySection {
    pub ap_count: usize,
    pub user_count: usize,
    pub area_side_km: f64,
    pub wrap: bool,
}

impl Default for GeometrySection {
    fn default() -> Self {
        GeometrySection { ap_count: 200, user_count: 20, area_side_km: 1.0, wrap: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathLossSection {
    pub carrier_mhz: f64,
    pub ap_height_m: f64,
    pub user_height_m: f64,
    pub d0_km: f64,
    pub d1_km: f64,
    pub shadowing_db: f64,
}

impl Default for PathLossSection {
    fn default() -> Self {
        let m = PathLossModel::<f64>::default();
        PathLossSection {
            carrier_mhz: m.carrier_mhz,
            ap_height_m: m.ap_height_m,
            user_height_m: m.user_height_m,
            d0_km: m.d0_km,
            d1_km: m.d1_km,
            shadowing_db: m.shadowing_db,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FrameSection {
    pub tau_c: usize,
    pub tau_p: usize,
}

impl Default for FrameSection {
    fn default() -> Self {
        FrameSection { tau_c: 200, tau_p: 20 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkBudget {
    pub bandwidth_hz: f64,
    pub noise_figure_db: f64,
    pub temperature_k: f64,
}

impl Default for LinkBudget {
    fn default() -> Self {
        LinkBudget { bandwidth_hz: 20e6, noise_figure_db: 9.0, temperature_k: 290.0 }
    }
}

/// Transmit powers in dBW: either a `"start:step:stop"` string or an explicit list.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct PowerGrid(pub Vec<f64>);

impl<'de> Deserialize<'de> for PowerGrid {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Range(String),
            List(Vec<f64>),
        }
        match Raw::deserialize(d)? {
            Raw::Range(s) => parse_power_range(&s).map(PowerGrid).map_err(serde::de::Error::custom),
            Raw::List(v) => Ok(PowerGrid(v)),
        }
    }
}

/// Largest number of points a power range may expand to.
const MAX_POWER_POINTS: usize = 10_000;

/// Parses `"start:step:stop"` (inclusive) or a comma-separated list.
pub fn parse_power_range(s: &str) -> Result<Vec<f64>, ConfigError> {
    let bad = |why: &str| ConfigError::Invalid(format!("power grid `{s}`: {why}"));
    let parts: Vec<&str> = s.split(':').map(str::trim).collect();
    let num = |p: &str| p.parse::<f64>().map_err(|_| bad("not a number"));
    match parts.as_slice() {
        [single] => single.split(',').map(|p| num(p.trim())).collect(),
        [a, step, b] => {
            let (a, step, b) = (num(a)?, num(step)?, num(b)?);
            if !(step > 0.0 && step.is_finite() && a.is_finite() && b.is_finite()) {
                return Err(bad("step must be positive and bounds finite"));
            }
            if b < a {
                return Err(bad("stop is below start"));
            }
            let n = ((b - a) / step + 1e-9).floor() as usize + 1;
            if n > MAX_POWER_POINTS {
                return Err(bad("too many points"));
            }
            Ok((0..n).map(|i| a + i as f64 * step).collect())
        }
        _ => Err(bad("expected start:step:stop")),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub levels: Vec<Levels>,
    pub schemes: Vec<CsiScheme>,
    pub powers_dbw: PowerGrid,
    /// Transmit power of the MSE experiment.
    pub mse_power_dbw: f64,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            levels: vec![Levels::Finite(2), Levels::Finite(4), Levels::Finite(8), Levels::Finite(32), Levels::Infinite],
            schemes: vec![CsiScheme::EstimateAndQuantize, CsiScheme::QuantizeAndEstimate],
            powers_dbw: PowerGrid(parse_power_range("-10:2:20").expect("default grid")),
            mse_power_dbw: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrialSection {
    /// Outer loop: geometry and shadowing realizations.
    pub geometry: usize,
    /// Inner loop: small-scale fading and noise draws per geometry.
    pub fading: usize,
}

impl Default for TrialSection {
    fn default() -> Self {
        TrialSection { geometry: 100, fading: 200 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    /// Points per emitted CDF table.
    pub cdf_points: usize,
    /// Also compute the exact ZF SINR in the throughput sweep.
    pub exact_sinr: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { cdf_points: 512, exact_sinr: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub seed: u64,
    pub geometry: GeometrySection,
    pub path_loss: PathLossSection,
    pub frame: FrameSection,
    pub link: LinkBudget,
    pub sweep: SweepSection,
    pub trials: TrialSection,
    pub output: OutputSection,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            seed: 1,
            geometry: GeometrySection::default(),
            path_loss: PathLossSection::default(),
            frame: FrameSection::default(),
            link: LinkBudget::default(),
            sweep: SweepSection::default(),
            trials: TrialSection::default(),
            output: OutputSection::default(),
        }
    }
}

impl SimulationConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: SimulationConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Small configuration for quick runs: `M=100`, `K=τ_p=10`, `τ_c=100`.
    pub fn desk_scale() -> Self {
        let mut cfg = SimulationConfig::default();
        cfg.geometry.ap_count = 100;
        cfg.geometry.user_count = 10;
        cfg.frame = FrameSection { tau_c: 100, tau_p: 10 };
        cfg.trials = TrialSection { geometry: 20, fading: 100 };
        cfg.output.exact_sinr = true;
        cfg
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |msg: String| Err(ConfigError::Invalid(msg));
        let g = &self.geometry;
        if g.user_count == 0 || g.ap_count == 0 {
            return bad("ap_count and user_count must be positive".into());
        }
        if g.ap_count < g.user_count {
            return bad(format!("zero-forcing needs ap_count ({}) >= user_count ({})", g.ap_count, g.user_count));
        }
        self.geometry_config().validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.path_loss_model().validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let f = &self.frame;
        if f.tau_p < g.user_count {
            return bad(format!("orthogonal pilots need tau_p ({}) >= user_count ({})", f.tau_p, g.user_count));
        }
        if f.tau_p >= f.tau_c {
            return bad(format!("tau_p ({}) must be below tau_c ({})", f.tau_p, f.tau_c));
        }
        let l = &self.link;
        if !(l.bandwidth_hz > 0.0 && l.bandwidth_hz.is_finite()) || !(l.temperature_k > 0.0) || !l.noise_figure_db.is_finite() {
            return bad("link budget values must be positive and finite".into());
        }
        let s = &self.sweep;
        if s.levels.is_empty() {
            return bad("at least one quantization level is required".into());
        }
        for &lv in &s.levels {
            Quantizer::<f64>::for_levels(lv).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        if s.schemes.is_empty() {
            return bad("at least one CSI scheme is required".into());
        }
        if s.powers_dbw.0.is_empty() || s.powers_dbw.0.iter().any(|p| !p.is_finite()) {
            return bad("power grid must be a nonempty list of finite values".into());
        }
        if !s.mse_power_dbw.is_finite() {
            return bad("mse_power_dbw must be finite".into());
        }
        if self.trials.geometry == 0 || self.trials.fading == 0 {
            return bad("trial counts must be positive".into());
        }
        if self.output.cdf_points < 2 {
            return bad("cdf_points must be at least 2".into());
        }
        Ok(())
    }

    pub fn geometry_config(&self) -> GeometryConfig<f64> {
        GeometryConfig {
            area_side: self.geometry.area_side_km,
            ap_count: self.geometry.ap_count,
            user_count: self.geometry.user_count,
            wrap: self.geometry.wrap,
        }
    }

    pub fn path_loss_model(&self) -> PathLossModel<f64> {
        let p = &self.path_loss;
        PathLossModel {
            carrier_mhz: p.carrier_mhz,
            ap_height_m: p.ap_height_m,
            user_height_m: p.user_height_m,
            d0_km: p.d0_km,
            d1_km: p.d1_km,
            shadowing_db: p.shadowing_db,
        }
    }

    pub fn noise_w(&self) -> f64 {
        noise_power(self.link.bandwidth_hz, self.link.noise_figure_db, self.link.temperature_k)
    }

    /// Normalized SNR for a transmit power in dBW.
    pub fn rho(&self, power_dbw: f64) -> f64 {
        normalized_snr(dbw_to_watt(power_dbw), self.noise_w())
    }

    pub fn power_split(&self, power_dbw: f64) -> PowerSplit<f64> {
        PowerSplit::new(self.rho(power_dbw), self.frame.tau_c, self.frame.tau_p).expect("validated frame")
    }

    /// Configured levels, deduplicated in order.
    pub fn levels(&self) -> Vec<Levels> {
        let mut out = Vec::new();
        for &l in &self.sweep.levels {
            if !out.contains(&l) {
                out.push(l);
            }
        }
        out
    }

    /// Configured quantized schemes (EQ and/or QE), deduplicated in order.
    pub fn quantized_schemes(&self) -> Vec<CsiScheme> {
        let mut out = Vec::new();
        for &s in &self.sweep.schemes {
            if s != CsiScheme::Ideal && !out.contains(&s) {
                out.push(s);
            }
        }
        out
    }

    /// SHA-256 of the canonical JSON form of the configuration.
    pub fn hash_hex(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
