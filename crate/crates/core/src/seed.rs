//! Counter-based seed derivation.
//!
//! A master seed fans out to independent streams with
//! `derive(master, stream, index) = splitmix64(splitmix64(master ^ stream) + index)`.
//! Every consumer owns a `ChaCha8Rng` seeded from its derived value, so the
//! result of a stage never depends on the order in which workers finish.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags. Changing any of these changes every downstream artifact.
pub mod stream {
    pub const LAYOUT: u64 = 0x4C41_594F;
    pub const OPTIMIZER: u64 = 0x4F50_5449;
    pub const DETECTOR: u64 = 0x4445_5445;
    pub const CAMPAIGN: u64 = 0x4341_4D50;
    pub const EXECUTOR: u64 = 0x4558_4543;
    pub const CRITIC: u64 = 0x4352_4954;
    pub const EPISODES: u64 = 0x4550_4953;
}

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive(master: u64, stream: u64, index: u64) -> u64 {
    splitmix64(splitmix64(master ^ stream).wrapping_add(index))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn stream_rng(master: u64, stream: u64, index: u64) -> ChaCha8Rng {
    rng(derive(master, stream, index))
}

/// Uniform value in [0, 1) from a hashed counter, for stateless per-call draws.
pub fn unit_from(seed: u64) -> f64 {
    (splitmix64(seed) >> 11) as f64 / (1u64 << 53) as f64
}
