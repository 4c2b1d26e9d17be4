//! Desk-scale laboratory for anchored policy optimization on tabular softmax
//! policies.
//!
//! The crate is organised bottom-up:
//!
//! - [`policy`]: logit tables, distributions, seeded sampling and snapshots.
//! - [`grad`]: closed-form logit gradients plus a central-difference oracle.
//! - [`anchor`]: Top-K safe manifolds, exclusive anchor sets and the virtual
//!   anchor ratio.
//! - [`objectives`]: per-token surrogates for GRPO, GRPO+KL (global and
//!   error-only), NSR and APO, and group-relative advantages.
//! - [`dynamics`]: single-step and bandit simulations of the softmax
//!   collapse/recovery dynamics.
//! - [`env`]: synthetic reasoning trees with verifiable rewards and the
//!   teacher-forcing coverage analysis.
//! - [`trainer`]: the on-policy training loop.
//! - [`metrics`]: Pass@1/Pass@K, entropy, MaxProb, Self-BLEU diversity,
//!   support mass and KL to the reference.
//! - [`gradcheck`]: the finite-difference verification suite over every
//!   analytic kernel and surrogate.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod anchor;
pub mod dynamics;
pub mod env;
pub mod error;
pub mod grad;
pub mod gradcheck;
pub mod metrics;
pub mod objectives;
pub mod policy;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};
pub use policy::{ContextId, Dist, LogitTable, PolicySnapshot, VocabId};
