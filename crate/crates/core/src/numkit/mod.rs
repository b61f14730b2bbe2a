//! Minimal differentiable-network toolkit.
//!
//! Fixed-topology multi-layer perceptrons with manual backpropagation,
//! diagonal-Gaussian and categorical heads, the Adam optimizer, a versioned
//! flat checkpoint format, and derived deterministic RNG streams. Everything
//! runs in 64-bit floats.

pub mod adam;
pub mod ckpt;
pub mod dist;
pub mod mlp;
pub mod rng;

pub use adam::AdamState;
pub use ckpt::{Checkpoint, CkptEntry, CkptShape};
pub use dist::{log_sum_exp, sample_index, softmax, Categorical, DiagGaussian, LN_2PI};
pub use mlp::{Mlp, MlpCache};
pub use rng::{derive_rng, keyed_rng, rng_key};
