//! Deterministic RNG streams.
//!
//! Every Monte Carlo consumer derives its generator from a master seed, an
//! operation tag and a block index, so results never depend on how blocks are
//! scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Number of draws per independently seeded block.
pub const BLOCK: usize = 4096;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Hash a short string tag into a u64.
pub fn tag(name: &str) -> u64 {
    name.bytes()
        .fold(0xCBF2_9CE4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01B3))
}

pub fn stream(seed: u64, tag: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix(seed ^ splitmix(tag)));
    rng.set_stream(index);
    rng
}

/// Child seed for a sub-experiment.
pub fn derive(seed: u64, salt: u64) -> u64 {
    splitmix(seed ^ splitmix(salt ^ 0xA5A5_A5A5))
}

/// Stream addressed by two indices (e.g. realization and region).
pub fn stream2(seed: u64, tag: u64, a: u64, b: u64) -> ChaCha8Rng {
    stream(seed, tag ^ splitmix(b.wrapping_add(0x5151)), a)
}

/// Split `total` draws into `(block_index, len)` chunks of at most [`BLOCK`].
pub fn blocks(total: usize) -> Vec<(u64, usize)> {
    (0..total.div_ceil(BLOCK))
        .map(|b| (b as u64, BLOCK.min(total - b * BLOCK)))
        .collect()
}
