//! Off-policy evaluation and pessimistic policy optimization for offline
//! reinforcement learning, built on weak (test-function) Bellman
//! constraints.
//!
//! Instead of forcing a candidate action-value function to satisfy the
//! Bellman equations everywhere, the methods here require its temporal
//! differences to be orthogonal to a user-chosen space of test functions, up
//! to a data-driven slack. The surviving candidates form a convex set (a
//! unit ball cut by affine slabs); optimizing the start-state value over
//! that set yields confidence intervals for policy evaluation
//! ([`ope::confidence_interval`]), a pessimistic critic for max-min policy
//! optimization ([`actor::run_actor_critic`]), and the off-policy cost
//! coefficients that quantify distribution shift ([`opc`]).
//!
//! Everything is exercised at desk scale on tabular MDPs through the
//! one-hot feature embedding, with exact linear-algebra oracles backing the
//! statistical machinery. Start with the `examples/` directory: each file
//! is a runnable walk-through of one capability.

pub mod actor;
pub mod data;
pub mod error;
pub mod feasibility;
pub mod features;
pub mod fixtures;
pub mod harness;
pub mod mdp;
pub mod opc;
pub mod ope;
pub mod rng;
pub mod solver;
pub mod testspace;

pub use error::{Error, Result};
