//! Reproducible random streams.
//!
//! Every consumer derives its generator from a root seed plus a path of
//! stream indices (simulation, attempt, draw, ...). The generator is ChaCha8,
//! whose 64-bit stream id selects an independent keystream, so results do not
//! depend on how work is scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

// splitmix64 finalizer
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generator for `seed` and the given stream path.
pub fn stream(seed: u64, path: &[u64]) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let id = path.iter().fold(0x5EED_u64, |acc, &p| mix(acc ^ mix(p)));
    rng.set_stream(id);
    rng
}

/// Child seed derived from a parent seed and index.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    mix(seed ^ mix(index.wrapping_add(1)))
}
