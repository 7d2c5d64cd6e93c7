//! Named, indexed RNG substreams derived from one global seed.
//!
//! A substream depends only on `(seed, name, indices)`, so work split
//! across threads draws the same numbers regardless of scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Seed for the substream `name[indices...]` of `seed`.
pub fn substream_seed(seed: u64, name: &str, indices: &[u64]) -> u64 {
    let mut h = splitmix(seed);
    for b in name.bytes() {
        h = splitmix(h ^ b as u64);
    }
    for &i in indices {
        h = splitmix(h ^ splitmix(i));
    }
    h
}

pub fn substream(seed: u64, name: &str, indices: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(substream_seed(seed, name, indices))
}
