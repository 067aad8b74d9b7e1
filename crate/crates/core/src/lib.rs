//! Neighborhood-cognition-consistent multi-agent reinforcement learning.
//!
//! Agents sit on an undirected graph. Each agent encodes its observation,
//! aggregates neighbor encodings with a shared graph convolution, and splits
//! the result into an agent-specific part and a variational "cognition"
//! latent. A cognitive-dissonance loss pulls the latents of neighboring agents
//! together while the usual temporal-difference loss trains the values.
//!
//! Two learners are provided: [`nccq`] for discrete actions (additive value
//! mixing) and [`nccac`] for continuous simplex actions (deterministic
//! actors with per-agent critics). [`envs`] contains the simulated packet
//! routing, wifi power and coordination-bandit environments, and [`harness`]
//! runs seeded experiments from JSON configs.

pub mod autodiff;
pub mod checkpoint;
pub mod cognition;
pub mod envs;
pub mod graph;
pub mod harness;
pub mod json;
pub mod nccac;
pub mod nccq;
pub mod nn;
pub mod rng;
pub mod schedule;
pub mod verify;

mod error;
pub use error::{Error, Result};
