//! Deterministic stream splitting.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// ChaCha stream keyed by `seed` and selected by the path `parts`.
/// Distinct paths give independent streams; the same path always gives the
/// same stream.
pub fn derive_rng(seed: u64, parts: &[u64]) -> ChaCha8Rng {
    let stream = parts.iter().fold(splitmix64(parts.len() as u64), |acc, p| {
        splitmix64(acc ^ splitmix64(*p))
    });
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
