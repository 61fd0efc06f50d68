//! Sampling-based stochastic trajectory optimization.
//!
//! Systems are control-affine SDEs `dx = f dt + g (u dt + dW)` integrated with
//! Euler–Maruyama. Rollouts are evaluated in parallel with per-rollout
//! random streams, so every result is a pure function of its seed.
//!
//! - [`rollout`]: integrator and batched rollouts with costs-to-go.
//! - [`weights`]: exponential weights, ESS, Monte-Carlo and importance-sampling estimators.
//! - [`controllers`]: MPPI (plain, smooth, log-sampled), cross-entropy, PI²-CMA and
//!   parameterized policy updates.
//! - [`models`]: cart-pole, planar bicycle with track and moving obstacles, scalar LQ.
//! - [`harness`]: experiment specs, closed-loop runs, CSV logs and comparisons.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod controllers;
pub mod error;
pub mod harness;
pub mod models;
pub mod noise;
pub mod rollout;
pub mod system;
pub mod weights;

pub use error::{Error, Result};
pub use noise::{NoiseConfig, NoiseKind, NoiseSequence};
pub use rollout::{
    euler_maruyama_step, rollout_batch, shift_receding_horizon, ControlSequence, RolloutBatch,
    RolloutOptions,
};
pub use system::{ControlCostForm, CostModel, Dynamics, StateCost};
pub use weights::{effective_sample_size, softmax_weights, SamplingDiagnostics, WeightVector};
