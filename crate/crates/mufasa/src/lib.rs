//! Multi-facet contextual bandits.
//!
//! A task consists of `K` bandits, each offering a set of feature-vector arms
//! per round. The learner plays one arm from every bandit and receives a
//! noisy *final reward* for the whole combination plus (possibly masked)
//! per-bandit *sub-rewards*. The `mufasa` policy models the combination
//! reward with an assembled neural network — one sub-network per bandit
//! feeding a shared combiner — and explores with gradient-based upper
//! confidence bounds maintained through online ridge design matrices.
//!
//! The crate ships:
//! - [`tensor`]: dense linear algebra with incremental inverse maintenance,
//! - [`mlp`]: bias-free ReLU networks with analytic gradients,
//! - [`assembly`]: the assembled model and its two training procedures,
//! - [`confidence`]: design-matrix streams and UCB bonuses,
//! - [`agents`]: the MuFasa policy and the per-bandit baselines,
//! - [`envs`]: synthetic and dataset-backed simulation environments,
//! - [`diagnostics`]: NTK construction, effective dimension, regret series,
//! - [`config`] / [`runner`]: the experiment harness behind the CLI.

pub mod agents;
pub mod assembly;
pub mod config;
pub mod confidence;
pub mod diagnostics;
pub mod envs;
pub mod error;
pub mod mlp;
pub mod rng;
pub mod runner;
pub mod tensor;

pub use error::{Error, Result};
