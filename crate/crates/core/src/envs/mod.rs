//! Desk-scale surrogate environments.
//!
//! A continuous-action point-mass maze family and a staged 2-D manipulation
//! chain. Both expose ground-truth region labels (corridor direction or
//! manipulation stage) so decomposition quality can be evaluated against an
//! oracle.

pub mod chain;
pub mod maze;
pub mod task;

pub use chain::{Assignment, StageChainEnv, StageChainSpec, StageKind, CHAIN_OBS_DIM};
pub use maze::{Corridor, Dir, MazeEnv, MazeLayout, PointMazeState, MAZE_OBS_DIM};
pub use task::{
    build_env, generate_maze_taskset, generate_chain_taskset, EnvKind, MazeGenMode, TaskSpec,
    TasksetSpec,
};

use rand_chacha::ChaCha8Rng;

/// Axis of motion, used by velocity-specialized region predicates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    Horizontal,
    Vertical,
}

/// Ground-truth region of the current state, exposed for evaluation and for
/// the noisy-oracle primitives. Maze states carry the adjacent corridor
/// directions (earlier corridor first; two entries in a corner cell) plus the
/// axis of motion. Stage-chain states carry (active box, stage kind).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RegionInfo {
    pub dirs: Vec<Dir>,
    pub vel_axis: Option<Axis>,
    pub stage: Option<(usize, StageKind)>,
}

/// One environment step.
#[derive(Clone, Debug)]
pub struct StepResult {
    pub obs: Vec<f64>,
    pub reward: f64,
    pub done: bool,
    pub success: bool,
    /// Ground-truth region of the state the action was taken from.
    pub region: RegionInfo,
}

/// Common surface over the surrogate environments. Instances are independent;
/// each rollout worker owns one exclusively.
pub trait Environment: Send {
    fn obs_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn horizon(&self) -> usize;
    fn reset(&mut self, rng: &mut ChaCha8Rng) -> Vec<f64>;
    fn step(&mut self, action: &[f64]) -> StepResult;
    /// Region of the current state.
    fn region(&self) -> RegionInfo;
    fn observe(&self) -> Vec<f64>;
}
