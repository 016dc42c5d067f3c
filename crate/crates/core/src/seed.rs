//! Seed derivation shared by every stochastic stage.
//!
//! Each task seed is `mix(master, stage, class, instance)`:
//!
//! ```text
//! h = splitmix64(master ^ fnv1a64(stage))
//! h = splitmix64(h ^ class)
//! h = splitmix64(h ^ instance)
//! ```
//!
//! `splitmix64` is the finalizer of Steele et al.'s SplitMix64 generator and
//! `fnv1a64` is the 64-bit FNV-1a string hash. Tasks never share an RNG, so
//! results do not depend on how work is scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn fnv1a64(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

pub fn mix(master: u64, stage: &str, class: u64, instance: u64) -> u64 {
    let h = splitmix64(master ^ fnv1a64(stage));
    let h = splitmix64(h ^ class);
    splitmix64(h ^ instance)
}

pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn task_rng(master: u64, stage: &str, class: u64, instance: u64) -> ChaCha8Rng {
    rng_from(mix(master, stage, class, instance))
}
