//! Model-free Bayesian reinforcement learning with Bayesian exploration networks.
//!
//! The crate is `no_std` (alloc only) so the numerical core can be embedded
//! anywhere; the companion CLI crate carries IO, config files, and metrics.
//!
//! Layout:
//! - [`tensor`], [`tape`], [`params`]: dense f64 tensors, reverse-mode autodiff
//!   on a dynamic tape, and an Adam-backed parameter store.
//! - [`nets`]: MLP, GRU, and the recurrent/contextual Q-network.
//! - [`flows`]: normalizing-flow layers (actnorm, masked autoregressive,
//!   LU-linear, permutation, slice, abs) and stacks with exact log-dets.
//! - [`model`]: the Bayesian exploration network itself: epistemic and
//!   aleatoric flows, bootstrap targets, ELBO and MSBBE losses, and the
//!   predictive optimal Bellman operator.
//! - [`envs`]: the tiger problem and the search-and-rescue gridworld, with
//!   exact beliefs and prior datasets.
//! - [`oracles`]: analytic tiger values, belief-grid value iteration, and
//!   reference policies used for validation.
//! - [`trainer`]: prior initialisation, posterior updating, and the outer
//!   approximate Bayesian RL loop.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod envs;
pub mod error;
pub mod flows;
pub mod history;
pub mod math;
pub mod model;
pub mod nets;
pub mod oracles;
pub mod params;
pub mod tape;
pub mod tensor;
pub mod trainer;

pub use error::Error;

/// Result alias used throughout the crate.
pub type Result<T> = core::result::Result<T, Error>;

/// Deterministic RNG used for every stochastic draw in the crate.
pub type Rng = rand_chacha::ChaCha8Rng;

/// A [`Rng`] seeded for reproducible runs.
pub fn rng_from_seed(seed: u64) -> Rng {
    <Rng as rand::SeedableRng>::seed_from_u64(seed)
}
