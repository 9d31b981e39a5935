//! Uplink link-level simulator for cell-free massive MIMO with coarsely
//! quantized fronthaul.
//!
//! The pipeline follows the signal path: large-scale geometry and small-scale
//! fading ([`propagation`]), pilot-based channel estimation with the
//! estimate-and-quantize and quantize-and-estimate fronthaul strategies
//! ([`csi`]), quantized data reception and zero-forcing detection at the
//! central processor ([`detection`]), and Monte-Carlo experiment drivers
//! ([`harness`]). Every numeric module is generic over [`Real`] (`f32` or
//! `f64`); the `*64` aliases below fix the common double-precision case.

pub mod csi;
pub mod detection;
pub mod harness;
pub mod linalg;
pub mod propagation;
pub mod quantizer;
pub mod scalar;

pub use scalar::Real;

pub use csi::{CsiEstimate, CsiScheme, EstimationStatistics, PilotBook, PowerSplit};
pub use detection::{EffectiveNoiseModel, SinrReport, ZfFrontEnd};
pub use propagation::{ChannelRealization, GeometryConfig, NetworkRealization, PathLossModel, Point};
pub use quantizer::{BussgangFactors, Levels, Quantizer, QuantizerSpec};

pub type QuantizerSpec64 = QuantizerSpec<f64>;
pub type QuantizerSpec32 = QuantizerSpec<f32>;
pub type Quantizer64 = Quantizer<f64>;
pub type BussgangFactors64 = BussgangFactors<f64>;
pub type PathLossModel64 = PathLossModel<f64>;
pub type GeometryConfig64 = GeometryConfig<f64>;
pub type NetworkRealization64 = NetworkRealization<f64>;
pub type NetworkRealization32 = NetworkRealization<f32>;
pub type ChannelRealization64 = ChannelRealization<f64>;
pub type PilotBook64 = PilotBook<f64>;
pub type PowerSplit64 = PowerSplit<f64>;
pub type EstimationStatistics64 = EstimationStatistics<f64>;
pub type CsiEstimate64 = CsiEstimate<f64>;
pub type EffectiveNoiseModel64 = EffectiveNoiseModel<f64>;
