//! Named random substreams derived from a master seed.
//!
//! Every stochastic draw in the crate goes through [`stream`], keyed by a
//! purpose tag and a short index path (building, EV, stage, path...). Two
//! draws with the same key always see the same numbers, no matter which
//! thread performs them or in what order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purpose tags for substreams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    ScenarioWind,
    ScenarioItinerary,
    RolloutBatch,
    RolloutWind,
    RolloutMobility,
    RolloutAction,
    Test,
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::ScenarioWind => 0x5749_4e44,
            Purpose::ScenarioItinerary => 0x4954_494e,
            Purpose::RolloutBatch => 0x4241_5443,
            Purpose::RolloutWind => 0x5257_4e44,
            Purpose::RolloutMobility => 0x524d_4f42,
            Purpose::RolloutAction => 0x5241_4354,
            Purpose::Test => 0x5445_5354,
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a master seed, a purpose and an index path into a child seed.
pub fn derive_seed(master: u64, purpose: Purpose, indices: &[u64]) -> u64 {
    let mut h = splitmix64(master ^ purpose.tag().rotate_left(17));
    for &i in indices {
        h = splitmix64(h ^ splitmix64(i.wrapping_add(0x632b_e59b_d9b4_e019)));
    }
    h
}

/// Deterministic generator for one named substream.
pub fn stream(master: u64, purpose: Purpose, indices: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, purpose, indices))
}
