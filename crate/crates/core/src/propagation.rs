//! Network geometry, large-scale fading and Rayleigh small-scale fading.
//!
//! APs and users are dropped uniformly in a square that wraps around at the
//! edges (torus metric). The large-scale gain of each AP/user link combines a
//! three-slope path loss with uncorrelated log-normal shadowing,
//! `β = 10^{PL/10} · 10^{σ_sh·z/10}`, and is stored in linear scale.

use ndarray::Array2;
use num_complex::Complex;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::{from_db, Real};

/// Boltzmann constant in J/K, at the precision used for link budgets.
pub const BOLTZMANN: f64 = 1.381e-23;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PropagationError {
    #[error("zero-forcing needs at least as many APs as users (M = {aps}, K = {users})")]
    TooFewAps { aps: usize, users: usize },
    #[error("at least one user is required")]
    NoUsers,
    #[error("area side must be positive, got {0}")]
    InvalidArea(f64),
    #[error("path-loss breakpoints must satisfy 0 < d0 < d1, got d0 = {d0}, d1 = {d1}")]
    InvalidBreakpoints { d0: f64, d1: f64 },
    #[error("shadowing deviation must be nonnegative, got {0}")]
    InvalidShadowing(f64),
    #[error("malformed network document: {0}")]
    Document(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point<T> {
    pub x: T,
    pub y: T,
}

impl<T: Real> Point<T> {
    pub fn new(x: T, y: T) -> Self {
        Point { x, y }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeometryConfig<T> {
    /// Side of the square area in km.
    pub area_side: T,
    pub ap_count: usize,
    pub user_count: usize,
    pub wrap: bool,
}

impl<T: Real> Default for GeometryConfig<T> {
    fn default() -> Self {
        GeometryConfig { area_side: T::one(), ap_count: 200, user_count: 20, wrap: true }
    }
}

impl<T: Real> GeometryConfig<T> {
    pub fn validate(&self) -> Result<(), PropagationError> {
        if self.user_count == 0 {
            return Err(PropagationError::NoUsers);
        }
        if self.ap_count < self.user_count {
            return Err(PropagationError::TooFewAps { aps: self.ap_count, users: self.user_count });
        }
        if !(self.area_side > T::zero()) {
            return Err(PropagationError::InvalidArea(self.area_side.as_f64()));
        }
        Ok(())
    }

    pub fn distance(&self, p: Point<T>, q: Point<T>) -> T {
        if self.wrap {
            wrap_distance(p, q, self.area_side)
        } else {
            ((p.x - q.x).powi(2) + (p.y - q.y).powi(2)).sqrt()
        }
    }
}

/// Three-slope path loss with a Hata-type attenuation constant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathLossModel<T> {
    /// Carrier frequency in MHz.
    pub carrier_mhz: T,
    pub ap_height_m: T,
    pub user_height_m: T,
    /// Near-field breakpoint in km.
    pub d0_km: T,
    /// Second breakpoint in km.
    pub d1_km: T,
    /// Shadowing standard deviation in dB.
    pub shadowing_db: T,
}

impl<T: Real> Default for PathLossModel<T> {
    fn default() -> Self {
        PathLossModel {
            carrier_mhz: T::lit(1900.0),
            ap_height_m: T::lit(15.0),
            user_height_m: T::lit(1.65),
            d0_km: T::lit(0.01),
            d1_km: T::lit(0.05),
            shadowing_db: T::lit(8.0),
        }
    }
}

impl<T: Real> PathLossModel<T> {
    pub fn validate(&self) -> Result<(), PropagationError> {
        if !(self.d0_km > T::zero() && self.d0_km < self.d1_km) {
            return Err(PropagationError::InvalidBreakpoints {
                d0: self.d0_km.as_f64(),
                d1: self.d1_km.as_f64(),
            });
        }
        if !(self.shadowing_db >= T::zero()) {
            return Err(PropagationError::InvalidShadowing(self.shadowing_db.as_f64()));
        }
        Ok(())
    }
}

/// Torus distance: the shortest Euclidean distance over the nine translated copies of `q`.
///
/// Coordinates are expected in `[0, side)`, where the per-axis minimum
/// `min(|Δ|, side - |Δ|)` selects the same copy.
pub fn wrap_distance<T: Real>(p: Point<T>, q: Point<T>, side: T) -> T {
    let fold = |a: T, b: T| {
        let d = (a - b).abs();
        d.min(side - d)
    };
    let dx = fold(p.x, q.x);
    let dy = fold(p.y, q.y);
    (dx * dx + dy * dy).sqrt()
}

/// Attenuation constant `ℒ` in dB (frequency in MHz, heights in m).
pub fn attenuation_constant<T: Real>(model: &PathLossModel<T>) -> T {
    let lf = model.carrier_mhz.log10();
    T::lit(46.3) + T::lit(33.9) * lf - T::lit(13.83) * model.ap_height_m.log10()
        - (T::lit(1.1) * lf - T::lit(0.7)) * model.user_height_m
        + (T::lit(1.56) * lf - T::lit(0.8))
}

/// Three-slope path loss in dB (a negative number) at distance `d` km.
pub fn path_loss_db<T: Real>(d: T, model: &PathLossModel<T>) -> T {
    let l = attenuation_constant(model);
    path_loss_db_with(d, model, l)
}

#[inline]
fn path_loss_db_with<T: Real>(d: T, model: &PathLossModel<T>, l: T) -> T {
    let (d0, d1) = (model.d0_km, model.d1_km);
    if d > d1 {
        -l - T::lit(35.0) * d.log10()
    } else if d > d0 {
        -l - T::lit(15.0) * d1.log10() - T::lit(20.0) * d.log10()
    } else {
        -l - T::lit(15.0) * d1.log10() - T::lit(20.0) * d0.log10()
    }
}

/// Jumps in dB between adjacent path-loss branches at `d0` and `d1`.
pub fn breakpoint_discontinuity_db<T: Real>(model: &PathLossModel<T>) -> [T; 2] {
    let l = attenuation_constant(model);
    let (d0, d1) = (model.d0_km, model.d1_km);
    let near = -l - T::lit(15.0) * d1.log10() - T::lit(20.0) * d0.log10();
    let mid = |d: T| -l - T::lit(15.0) * d1.log10() - T::lit(20.0) * d.log10();
    let far = -l - T::lit(35.0) * d1.log10();
    [(mid(d0) - near).abs(), (far - mid(d1)).abs()]
}

/// One drop of the network: positions in km and the `M×K` large-scale gains.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkRealization<T> {
    pub ap_positions: Vec<Point<T>>,
    pub user_positions: Vec<Point<T>>,
    /// `β_mk` in linear scale, rows indexed by AP.
    pub beta: Array2<T>,
}

impl<T: Real> NetworkRealization<T> {
    pub fn ap_count(&self) -> usize {
        self.beta.nrows()
    }

    pub fn user_count(&self) -> usize {
        self.beta.ncols()
    }

    /// `Σ_k β_mk` for each AP.
    pub fn beta_row_sums(&self) -> Vec<T> {
        self.beta.rows().into_iter().map(|r| r.iter().copied().sum()).collect()
    }

    /// Serializes positions and the row-major β matrix as a JSON document.
    pub fn to_json(&self) -> String {
        let doc = NetworkDocument {
            ap_count: self.ap_count(),
            user_count: self.user_count(),
            ap_positions_km: self.ap_positions.iter().map(|p| [p.x.as_f64(), p.y.as_f64()]).collect(),
            user_positions_km: self.user_positions.iter().map(|p| [p.x.as_f64(), p.y.as_f64()]).collect(),
            beta_linear: self
                .beta
                .rows()
                .into_iter()
                .map(|r| r.iter().map(|b| b.as_f64()).collect())
                .collect(),
        };
        serde_json::to_string_pretty(&doc).expect("plain data serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, PropagationError> {
        let doc: NetworkDocument =
            serde_json::from_str(text).map_err(|e| PropagationError::Document(e.to_string()))?;
        let (m, k) = (doc.ap_count, doc.user_count);
        if doc.ap_positions_km.len() != m
            || doc.user_positions_km.len() != k
            || doc.beta_linear.len() != m
            || doc.beta_linear.iter().any(|r| r.len() != k)
        {
            return Err(PropagationError::Document("dimension mismatch".into()));
        }
        let pt = |p: &[f64; 2]| Point::new(T::lit(p[0]), T::lit(p[1]));
        let flat: Vec<T> = doc.beta_linear.iter().flatten().map(|&b| T::lit(b)).collect();
        if flat.iter().any(|b| !(*b > T::zero())) {
            return Err(PropagationError::Document("large-scale gains must be positive".into()));
        }
        Ok(NetworkRealization {
            ap_positions: doc.ap_positions_km.iter().map(pt).collect(),
            user_positions: doc.user_positions_km.iter().map(pt).collect(),
            beta: Array2::from_shape_vec((m, k), flat).expect("checked shape"),
        })
    }
}

/// On-disk layout of an exported network.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkDocument {
    pub ap_count: usize,
    pub user_count: usize,
    pub ap_positions_km: Vec<[f64; 2]>,
    pub user_positions_km: Vec<[f64; 2]>,
    /// Row-major, one row per AP.
    pub beta_linear: Vec<Vec<f64>>,
}

/// Builds β from fixed positions; `shadowing` supplies one standard-normal draw per link
/// in row-major order (pass `None` to disable shadowing).
pub fn network_from_positions<T: Real, R: Rng + ?Sized>(
    ap_positions: Vec<Point<T>>,
    user_positions: Vec<Point<T>>,
    geom: &GeometryConfig<T>,
    model: &PathLossModel<T>,
    shadowing: Option<&mut R>,
) -> NetworkRealization<T> {
    let (m, k) = (ap_positions.len(), user_positions.len());
    let l = attenuation_constant(model);
    let mut beta = Array2::zeros((m, k));
    let mut shadowing = shadowing;
    for (i, ap) in ap_positions.iter().enumerate() {
        for (j, ue) in user_positions.iter().enumerate() {
            let pl = path_loss_db_with(geom.distance(*ap, *ue), model, l);
            let sh = match shadowing.as_deref_mut() {
                Some(rng) => model.shadowing_db * T::standard_normal(rng),
                None => T::zero(),
            };
            beta[[i, j]] = from_db(pl + sh);
        }
    }
    NetworkRealization { ap_positions, user_positions, beta }
}

/// Drops APs and users uniformly and draws shadowing. Deterministic given the RNG state.
pub fn draw_network<T: Real, R: Rng + ?Sized>(
    geom: &GeometryConfig<T>,
    model: &PathLossModel<T>,
    rng: &mut R,
) -> Result<NetworkRealization<T>, PropagationError> {
    geom.validate()?;
    model.validate()?;
    let drop = |n: usize, rng: &mut R| -> Vec<Point<T>> {
        (0..n)
            .map(|_| {
                let x = T::unit_uniform(rng) * geom.area_side;
                let y = T::unit_uniform(rng) * geom.area_side;
                Point::new(x, y)
            })
            .collect()
    };
    let aps = drop(geom.ap_count, rng);
    let users = drop(geom.user_count, rng);
    Ok(network_from_positions(aps, users, geom, model, Some(rng)))
}

/// Channel matrix `G = H ⊙ D^{1/2}` for one small-scale realization.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization<T> {
    pub g: Array2<Complex<T>>,
}

/// I.i.d. `CN(0, 1)` entries.
pub fn draw_small_scale<T: Real, R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Array2<Complex<T>> {
    let data: Vec<Complex<T>> = (0..rows * cols).map(|_| T::complex_normal(rng, T::one())).collect();
    Array2::from_shape_vec((rows, cols), data).expect("shape matches length")
}

impl<T: Real> ChannelRealization<T> {
    /// Applies the large-scale gains to unit-variance small-scale fading.
    pub fn from_small_scale(h: &Array2<Complex<T>>, beta: &Array2<T>) -> Self {
        let mut g = h.clone();
        g.zip_mut_with(beta, |g, &b| *g *= b.sqrt());
        ChannelRealization { g }
    }
}

pub fn draw_channel<T: Real, R: Rng + ?Sized>(net: &NetworkRealization<T>, rng: &mut R) -> ChannelRealization<T> {
    let h = draw_small_scale(net.ap_count(), net.user_count(), rng);
    ChannelRealization::from_small_scale(&h, &net.beta)
}

/// Thermal noise power `B·k_B·T0·NF` in W.
pub fn noise_power<T: Real>(bandwidth_hz: T, noise_figure_db: T, temperature_k: T) -> T {
    bandwidth_hz * T::lit(BOLTZMANN) * temperature_k * from_db(noise_figure_db)
}

/// Transmit power over noise power.
pub fn normalized_snr<T: Real>(tx_power_w: T, noise_w: T) -> T {
    tx_power_w / noise_w
}

pub fn dbw_to_watt<T: Real>(dbw: T) -> T {
    from_db(dbw)
}
