//! Keyed random streams.
//!
//! Every consumer of randomness (a gene's permutation sequence, one
//! component of a simulated dataset, a Monte-Carlo batch) draws from its own
//! ChaCha8 stream derived from `(seed, key, stream)`. Results therefore do not
//! depend on scheduling order or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Mix a seed with a key into a new 64-bit seed.
pub fn derive_seed(seed: u64, key: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ splitmix64(key.wrapping_add(0x5851_F42D_4C95_7F2D)))
}

/// Deterministic stream for `(seed, key, stream)`.
pub fn stream(seed: u64, key: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, key));
    rng.set_stream(stream);
    rng
}
