//! Seeded randomness. Every random decision derives from one user seed plus a
//! path of counters, so no global generator state exists.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Generator for the sub-stream identified by `path` under `seed`.
pub fn split_rng(seed: u64, path: &[u64]) -> ChaCha8Rng {
    let stream = path
        .iter()
        .fold(0x5348_4743_u64, |acc, &p| splitmix64(acc ^ splitmix64(p)));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
