//! Counter-based random streams.
//!
//! Every draw is addressed by `(seed, stream, counter)`. A stream is a
//! ChaCha8 keystream selected with `set_stream`, and the counter selects a
//! disjoint window of 2^32 words inside it, so the random numbers used for a
//! given sample and time step never depend on how work was scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const WORDS_PER_COUNTER: u128 = 1 << 32;

/// Mix a 64-bit value (SplitMix64 finalizer).
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a sub-seed for an independent purpose (e.g. a given slice or
/// diagnostic) from a master seed.
pub fn derive_seed(master: u64, tag: u64) -> u64 {
    mix64(master ^ mix64(tag.wrapping_add(0x632B_E59B_D9B4_E019)))
}

/// Generator positioned at the start of `(stream, counter)`.
pub fn counter_rng(seed: u64, stream: u64, counter: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.set_word_pos(counter as u128 * WORDS_PER_COUNTER);
    rng
}
