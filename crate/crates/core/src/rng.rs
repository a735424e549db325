//! Seedable, splittable random number generation.
//!
//! Every stochastic routine takes an explicit `&mut SimRng`. Independent
//! streams (per SNR point, per trial block) are derived from a master seed by
//! hashing the stream coordinates, so results never depend on how work is
//! scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// SplitMix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn rng_from_seed(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}

/// Generator for the stream identified by `path` under `seed`.
pub fn derive_rng(seed: u64, path: &[u64]) -> SimRng {
    let mut state = mix64(seed);
    for &p in path {
        state = mix64(state ^ mix64(p.wrapping_add(0x51_7cc1_b727_220a)));
    }
    let mut key = [0u8; 32];
    for (i, chunk) in key.chunks_exact_mut(8).enumerate() {
        state = mix64(state.wrapping_add(i as u64));
        chunk.copy_from_slice(&state.to_le_bytes());
    }
    SimRng::from_seed(key)
}
