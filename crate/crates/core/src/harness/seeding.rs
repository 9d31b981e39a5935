//! Deterministic random substreams.
//!
//! Every Monte-Carlo unit owns a ChaCha8 stream whose key is derived from the
//! master seed and a stage tag and whose stream id is the trial index, so no
//! two units share state and results do not depend on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Pipeline stage a random stream belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stage {
    Geometry,
    Fading,
    CsiOracle,
    MomentOracle,
    BussgangOracle,
    SymbolOracle,
    Validation,
}

impl Stage {
    fn tag(self) -> u64 {
        match self {
            Stage::Geometry => 0x67656f6d,
            Stage::Fading => 0x66616465,
            Stage::CsiOracle => 0x63736969,
            Stage::MomentOracle => 0x6d6f6d65,
            Stage::BussgangOracle => 0x62757373,
            Stage::SymbolOracle => 0x73796d62,
            Stage::Validation => 0x76616c69,
        }
    }
}

const DOMAIN: &[u8; 16] = b"cellfree-streams";

pub fn seed_substream(master_seed: u64, trial_index: u64, stage: Stage) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&master_seed.to_le_bytes());
    key[8..16].copy_from_slice(&stage.tag().to_le_bytes());
    key[16..].copy_from_slice(DOMAIN);
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(trial_index);
    rng
}

/// Stream index of fading trial `trial` inside geometry realization `geometry`.
pub fn nested_index(geometry: usize, trial: usize) -> u64 {
    ((geometry as u64) << 32) | trial as u64
}
