//! Deterministic random streams.
//!
//! Every stochastic step draws from a ChaCha stream derived from the run seed
//! plus a purpose tag and an index, so results do not depend on evaluation
//! order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub mod tag {
    pub const INIT: u64 = 1;
    pub const SHUFFLE: u64 = 2;
    pub const AUGMENT: u64 = 3;
    pub const DROPOUT: u64 = 4;
    pub const FOLDS: u64 = 5;
    pub const SYNTH: u64 = 6;
    pub const FOLD_RUN: u64 = 7;
}

/// Seeded generator.
pub fn seeded(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

/// Independent stream for `(seed, tag, index)`.
pub fn stream(seed: u64, tag: u64, index: u64) -> Rng {
    let mut rng = Rng::seed_from_u64(seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(index);
    rng
}
