//! Multi-preference actor-critic.
//!
//! An advantage actor-critic learner whose policy search is constrained by a
//! set of preference critics (entropy, conservative updates, reference policy,
//! adversarial imitation). Each preference contributes a per-sample metric
//! `d_k`; the batch mean is held below a threshold `l_k` through a learned,
//! nonnegative Lagrange multiplier.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, configuration
//! and the command-line trainer live in the `mpac` crate.

#![cfg_attr(not(test), no_std)]
#![warn(rust_2018_idioms, unused_qualifications)]

extern crate alloc;

pub mod demos;
pub mod diffnet;
pub mod envs;
mod error;
pub mod harness;
pub mod lagrange;
pub mod math;
pub mod policy;
pub mod preferences;
pub mod rollout;

pub use error::{Error, Result};

/// Seeded random stream used everywhere randomness is drawn.
pub type Rng = rand_chacha::ChaCha8Rng;

/// Build a [`Rng`] from a 64-bit seed.
pub fn rng_from_seed(seed: u64) -> Rng {
    use rand::SeedableRng;
    Rng::seed_from_u64(seed)
}
