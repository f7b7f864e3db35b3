//! Seed derivation.
//!
//! Every random stream in the crate is a [`ChaCha8Rng`] whose seed is derived
//! from a master seed and a path of integers (domain tag, replicate index,
//! block index, ...). Streams with different paths are independent and a
//! stream never depends on how work is scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Stream tags used to keep unrelated consumers of one master seed apart.
pub mod stream {
    pub const DATA: u64 = 0x01;
    pub const BETA: u64 = 0x02;
    pub const SIGMA: u64 = 0x03;
    pub const UEN: u64 = 0x04;
    pub const RISK_MC: u64 = 0x05;
    pub const TAIL: u64 = 0x06;
    pub const GHOST: u64 = 0x07;
    pub const RADEMACHER_DATA: u64 = 0x08;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from `master` and a path of indices.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    let mut state = splitmix64(master);
    for &p in path {
        state = splitmix64(state ^ splitmix64(p.wrapping_add(0x632B_E59B_D9B4_E019)));
    }
    state
}

pub fn rng_for(master: u64, path: &[u64]) -> SimRng {
    SimRng::seed_from_u64(derive_seed(master, path))
}

/// Splits `total` items into fixed-size blocks `(block index, start, len)`.
///
/// Block boundaries depend only on `total` and `block`, so per-block seeds
/// make parallel Monte Carlo reproducible for any thread count.
pub(crate) fn blocks(total: usize, block: usize) -> Vec<(u64, usize, usize)> {
    let block = block.max(1);
    (0..total.div_ceil(block))
        .map(|b| {
            let start = b * block;
            (b as u64, start, block.min(total - start))
        })
        .collect()
}
