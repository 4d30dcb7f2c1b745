//! Reproducible randomness.
//!
//! All generators are ChaCha8 (`rand_chacha`). A generator is addressed by a
//! 64-bit seed plus a 64-bit stream id, so replicate `r` of a campaign seeded
//! with `s` is `stream(s, r)` regardless of which thread evaluates it or in
//! what order. Hierarchical seeds (sweep cell, replication, learner) are
//! derived with the SplitMix64 finalizer.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Generator for stream `stream_id` under `seed`.
pub fn stream(seed: u64, stream_id: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id);
    rng
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a path of indices into a child seed.
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(base), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}
