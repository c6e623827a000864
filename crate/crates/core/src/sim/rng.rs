//! Seed derivation for replicate and agent streams.
//!
//! Every random draw in a simulation comes from a ChaCha8 stream that is a
//! pure function of `(master_seed, replicate, actor)`:
//!
//! * key: `ChaCha8Rng::seed_from_u64(master_seed)`
//! * stream id: `replicate`
//! * word position: `actor << 32`
//!
//! Actor 0 is nature (latent state draws); roster entry `i` is actor `i + 1`.
//! Each actor owns `2^32` words of its stream, so streams never overlap for
//! fewer than `2^31` draws per actor per replicate. A uniform variate is the
//! top 53 bits of one `next_u64`, scaled by `2^-53`.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const NATURE: u64 = 0;

pub fn agent_actor(index: usize) -> u64 {
    index as u64 + 1
}

pub fn stream(master_seed: u64, replicate: u64, actor: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(replicate);
    rng.set_word_pos(u128::from(actor) << 32);
    rng
}

/// Uniform on `[0, 1)`.
pub fn uniform(rng: &mut impl RngCore) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// First index whose cumulative weight exceeds `u`; falls back to the last
/// index with positive weight.
pub fn categorical(weights: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (k, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return k;
        }
    }
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}
