//! Seeded random streams.
//!
//! Everything random in a run derives from one integer seed. Independent
//! consumers (environment, trainer, replay sampling, ...) get separate
//! ChaCha streams of the same key so adding draws in one never shifts
//! another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub mod streams {
    pub const ENV: u64 = 1;
    pub const TRAINER: u64 = 2;
    pub const REPLAY: u64 = 3;
    pub const BOOTSTRAP: u64 = 4;
    pub const EVAL: u64 = 5;
    pub const INIT: u64 = 6;
}

pub fn stream(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// 64-bit FNV-1a; stable across platforms and compiler versions.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}
