//! Ensemble model-based meta-reinforcement learning with a minimum-attention
//! regularizer.
//!
//! The crate is `no_std` (it needs `alloc`) and contains only computation:
//! dense MLPs with exact parameter gradients and input Jacobians, stochastic
//! continuous-control environments, exploration noise, a learned dynamics
//! ensemble, Gaussian policies, the attention metrics and the meta-learning
//! loop that ties them together. File formats, configuration and the command
//! line live in the `minattn` crate.
//!
//! All randomness flows through [`rng::SimRng`] streams derived from a master
//! seed, so every public entry point is a pure function of its inputs and seed.

#![no_std]
#![warn(missing_debug_implementations)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod adam;
pub mod attention;
pub mod buffer;
pub mod ensemble;
pub mod env;
pub mod error;
pub mod linalg;
pub mod meta;
pub mod mlp;
pub mod noise;
pub mod policy;
pub mod rng;
pub mod stats;
pub mod trajectory;

pub use error::{Error, Result};
