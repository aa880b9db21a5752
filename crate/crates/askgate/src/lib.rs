//! Goal-misgeneralization testbed with ask-for-help gating.
//!
//! The crate builds a small, fully deterministic experiment stack:
//!
//! * [`env`] — a seeded, procedurally generated side-scrolling platformer with
//!   a train distribution (coin at the far right) and a test distribution
//!   (coin at a random standable column).
//! * [`neural`] — a dense policy/value network with manual backprop, Adam,
//!   and a versioned weight container.
//! * [`ppo`] — clipped-surrogate PPO with GAE, used for the weak agent, the
//!   expert agent, and the skyline meta-policies.
//! * [`gating`] — five action-distribution uncertainty gates with
//!   percentile-threshold calibration, plus a random baseline.
//! * [`svdd`] — a Deep-SVDD one-class anomaly detector over raw observations
//!   or the weak agent's latent representation.
//! * [`skyline`] — meta-policies trained directly on the test distribution
//!   that choose per step between the weak and expert agents.
//! * [`harness`] — gated rollouts, threshold sweeps, AFHP/reward curves with
//!   trapezoidal AUC, and ask-location analytics.
//!
//! Everything is seed-driven: identical seeds and configs reproduce
//! bit-identical rollouts, weights, and CSV artifacts. Batch work (sweeps,
//! calibration, rollout collection) runs data-parallel under the `parallel`
//! feature and falls back to a sequential path without it; both paths merge
//! results in deterministic order and produce identical output.

pub mod env;
pub mod exec;
pub mod gating;
pub mod harness;
pub mod neural;
pub mod ppo;
pub mod rng;
pub mod skyline;
pub mod svdd;
