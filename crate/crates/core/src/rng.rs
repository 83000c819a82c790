//! Counter-based seeding.
//!
//! Every random decision in training and evaluation draws from a generator
//! derived from `(seed, domain, index)`, so a run can be resumed from a
//! cursor without persisting generator state.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const DOMAIN_INIT: u64 = 1;
pub const DOMAIN_DROPOUT: u64 = 2;
pub const DOMAIN_WRITE: u64 = 3;
pub const DOMAIN_REPLAY: u64 = 4;
pub const DOMAIN_SHUFFLE: u64 = 5;
pub const DOMAIN_NEIGHBORS: u64 = 6;
pub const DOMAIN_BALANCE: u64 = 7;
pub const DOMAIN_SYNTH: u64 = 8;
pub const DOMAIN_ADAPT_DROPOUT: u64 = 9;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn mix(seed: u64, domain: u64, index: u64) -> u64 {
    splitmix(splitmix(splitmix(seed) ^ domain) ^ index)
}

pub fn derive_rng(seed: u64, domain: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(seed, domain, index))
}

/// FNV-1a over a token slice; used to key per-example randomness by content.
pub fn content_hash(tokens: &[u32]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for t in tokens {
        for b in t.to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    h
}
