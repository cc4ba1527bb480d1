//! Counter-based seed derivation and the per-stream generator.
//!
//! Every stochastic stream (one environment episode, one particle set, one
//! policy sampler) is seeded from `(master, stream, counter)` so results do
//! not depend on how work is scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a master seed with a stream index and a counter.
pub fn derive_seed(master: u64, stream: u64, counter: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(master) ^ stream.wrapping_mul(0xA076_1D64_78BD_642F)) ^ counter)
}

pub fn stream_rng(seed: u64) -> StreamRng {
    ChaCha8Rng::seed_from_u64(seed)
}
