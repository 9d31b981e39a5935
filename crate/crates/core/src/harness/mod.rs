//! Configuration, deterministic Monte-Carlo orchestration, experiment drivers,
//! validation and result serialization.

pub mod config;
pub mod experiments;
pub mod output;
pub mod seeding;
pub mod validate;

pub use config::{parse_power_range, ConfigError, SimulationConfig};
pub use experiments::{
    crossing_power, draw_geometry, ks_distance, run_mse_cdf, run_quantizer_table, run_sinr_deviation, run_throughput_sweep,
    throughput_gap_db, MseCdfResult, MseCurve, QuantizerRow, Receiver, SinrDeviation, SweepRow, ThroughputResult,
};
pub use seeding::{nested_index, seed_substream, Stage};
pub use validate::{validate, CheckResult, ValidationOptions, ValidationReport};
