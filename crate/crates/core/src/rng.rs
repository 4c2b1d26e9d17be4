//! Seeded random streams.
//!
//! Every random draw in the crate comes from ChaCha8 (`rand_chacha`), which is
//! a counter-based generator with a fixed, platform-independent output.
//! Independent streams are split from one master seed by the rule
//!
//! ```text
//! stream(seed, id) = ChaCha8Rng::seed_from_u64(seed) with set_stream(id)
//! ```
//!
//! so a given `(seed, id)` pair always yields the same sequence no matter how
//! many other streams were consumed before it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type LabRng = ChaCha8Rng;

/// Stream used to generate a reasoning tree from its `EnvConfig::seed`.
pub const TREE_STREAM: u64 = 0;
/// Stream used for training rollouts.
pub const TRAIN_STREAM: u64 = 1;
/// Stream used by the dynamics-lab bandit harness.
pub const BANDIT_STREAM: u64 = 2;
/// Evaluation at training step `s` draws from stream `EVAL_STREAM_BASE + s`.
pub const EVAL_STREAM_BASE: u64 = 1 << 32;

pub fn stream(seed: u64, id: u64) -> LabRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

pub fn eval_stream(seed: u64, step: usize) -> LabRng {
    stream(seed, EVAL_STREAM_BASE + step as u64)
}
