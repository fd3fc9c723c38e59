//! Seeded random streams.
//!
//! Every random quantity is drawn from a ChaCha8 stream addressed by
//! `(seed, key, stream)`. The key selects a family (a base table, a cell,
//! a residual draw) and is mixed into the 64-bit seed with SplitMix64; the
//! stream index uses ChaCha's native 2^64 stream counter. Replicate `r` of a
//! cell always reads stream `r`, so results never depend on which thread
//! runs which replicate.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// SplitMix64 finalizer.
pub fn mix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Folds a sequence of words into one key.
pub fn key_of(words: &[u64]) -> u64 {
    words
        .iter()
        .fold(0x005E_ED0F_u64, |acc, w| mix64(acc ^ mix64(*w)))
}

pub fn substream(seed: u64, key: u64, stream: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(mix64(seed ^ mix64(key)));
    rng.set_stream(stream);
    rng
}

/// Uniform on the open interval (0, 1) with 53 bits of resolution.
pub fn open_unit<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let bits = rng.next_u64() >> 11;
    (bits as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}
