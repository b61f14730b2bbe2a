//! Gated hierarchical policy learning driven by suboptimal world models.
//!
//! A set of "model primitives" (noisy or learned next-state predictors, each
//! competent only in part of the state space) is used to decompose a control
//! task: a categorical gating controller is trained to predict which primitive
//! explains each transition best, and K Gaussian subpolicies are trained with a
//! gate-weighted clipped-PPO objective so each one specializes in the region
//! where its primitive wins. Subpolicies persist across a task sequence while
//! the gating controller and value baseline are re-initialized per task.

pub mod envs;
pub mod error;
pub mod gating;
pub mod harness;
pub mod lifelong;
pub mod numkit;
pub mod policy;
pub mod primitives;

pub use error::{Error, Result};
