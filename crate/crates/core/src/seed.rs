//! Seed derivation and the crate-wide RNG.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Independent child seed for `(base, index)`, via the splitmix64 finalizer.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Named sub-stream so unrelated consumers of one base seed never collide.
pub fn stream_seed(base: u64, stream: &str) -> u64 {
    stream
        .bytes()
        .fold(base, |acc, b| derive_seed(acc, u64::from(b)))
}

pub fn rng(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}
