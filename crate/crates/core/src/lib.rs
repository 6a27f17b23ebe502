//! Learning flow maps of dynamical systems from a single noisy trajectory.
//!
//! A flow map `H` advances a state by a fixed interval `dt`. It is represented
//! by a dense network trained on noise-cloud pairs (perturbed state, clean
//! next state) while a discretized-dynamics constraint with a learnable
//! diagonal correction is enforced in one of three ways:
//!
//! - [`supervised`]: the constraint residual is added to the L2 loss,
//! - [`gan`]: the residual is appended to the discriminator input,
//! - [`ac`]: the residual enters a negative reward for a deterministic
//!   actor-critic whose policy is the flow map, with homotopy between the
//!   bootstrapped reward and the critic in the policy update.
//!
//! [`rollout`] iterates a trained map and scores it against ground truth from
//! [`dynamics`].

pub mod ac;
pub mod app;
pub mod config;
pub mod constraints;
mod csv_io;
pub mod dataset;
pub mod dynamics;
pub mod error;
pub mod gan;
pub mod nn;
pub mod oracles;
pub mod rng;
pub mod rollout;
pub mod supervised;

pub use error::{Error, Result};
