//! Task specifications and seeded taskset generation.
//!
//! A task is an environment description plus a horizon and a success-rate
//! threshold. Tasksets are generated deterministically from a seed and have a
//! plain-text encoding so a run can record exactly what it trained on.

use super::chain::{StageChainEnv, StageChainSpec, N_BOXES, N_TARGETS, STEPS_PER_ASSIGNMENT};
use super::maze::{Corridor, Dir, MazeEnv, MazeLayout, STEPS_PER_CORRIDOR};
use super::Environment;
use crate::numkit::derive_rng;
use crate::{Error, Result};
use rand::Rng;

pub const MAZE_SUCCESS_THRESHOLD: f64 = 0.8;
pub const CHAIN_SUCCESS_THRESHOLD: f64 = 0.75;

#[derive(Clone, Debug, PartialEq)]
pub enum EnvKind {
    Maze(MazeLayout),
    Chain(StageChainSpec),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskSpec {
    pub name: String,
    pub kind: EnvKind,
    pub horizon: usize,
    /// Fraction of evaluation episodes that must succeed to call the task
    /// learned.
    pub success_threshold: f64,
}

impl TaskSpec {
    pub fn maze(name: &str, layout: MazeLayout) -> Self {
        let horizon = STEPS_PER_CORRIDOR * layout.corridors().len();
        Self {
            name: name.to_string(),
            kind: EnvKind::Maze(layout),
            horizon,
            success_threshold: MAZE_SUCCESS_THRESHOLD,
        }
    }

    pub fn chain(name: &str, spec: StageChainSpec) -> Self {
        let horizon = STEPS_PER_ASSIGNMENT * spec.assignments.len();
        Self {
            name: name.to_string(),
            kind: EnvKind::Chain(spec),
            horizon,
            success_threshold: CHAIN_SUCCESS_THRESHOLD,
        }
    }

    pub fn obs_dim(&self) -> usize {
        build_env(self, 0.0).obs_dim()
    }

    pub fn action_dim(&self) -> usize {
        build_env(self, 0.0).action_dim()
    }

    fn encode_line(&self) -> String {
        let (kind, body) = match &self.kind {
            EnvKind::Maze(l) => ("maze", l.encode()),
            EnvKind::Chain(s) => ("chain", s.encode()),
        };
        format!(
            "{kind} {} horizon={} threshold={} :: {body}",
            self.name, self.horizon, self.success_threshold
        )
    }

    fn decode_line(line: &str) -> Result<Self> {
        let (head, body) = line
            .split_once(" :: ")
            .ok_or_else(|| Error::InvalidInput(format!("task line missing body: {line:?}")))?;
        let fields: Vec<&str> = head.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(Error::InvalidInput(format!("bad task header: {head:?}")));
        }
        let name = fields[1].to_string();
        let horizon: usize = fields[2]
            .strip_prefix("horizon=")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::InvalidInput(format!("bad horizon in {head:?}")))?;
        let success_threshold: f64 = fields[3]
            .strip_prefix("threshold=")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::InvalidInput(format!("bad threshold in {head:?}")))?;
        let kind = match fields[0] {
            "maze" => EnvKind::Maze(MazeLayout::decode(body)?),
            "chain" => EnvKind::Chain(StageChainSpec::decode(body)?),
            other => return Err(Error::InvalidInput(format!("unknown task kind {other:?}"))),
        };
        Ok(Self { name, kind, horizon, success_threshold })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TasksetSpec {
    pub tasks: Vec<TaskSpec>,
}

impl TasksetSpec {
    pub fn encode(&self) -> String {
        let mut out = String::new();
        for t in &self.tasks {
            out.push_str(&t.encode_line());
            out.push('\n');
        }
        out
    }

    pub fn decode(text: &str) -> Result<Self> {
        let tasks = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(TaskSpec::decode_line)
            .collect::<Result<Vec<_>>>()?;
        if tasks.is_empty() {
            return Err(Error::InvalidInput("empty taskset".into()));
        }
        Ok(Self { tasks })
    }
}

/// Fresh environment instance for a task. `jitter` scales the reset noise
/// (1.0 = nominal; 0.0 gives deterministic resets for probes).
pub fn build_env(task: &TaskSpec, jitter: f64) -> Box<dyn Environment> {
    match &task.kind {
        EnvKind::Maze(layout) => Box::new(MazeEnv::new(
            layout.clone(),
            task.horizon,
            super::maze::RESET_JITTER * jitter,
        )),
        EnvKind::Chain(spec) => {
            Box::new(StageChainEnv::new(spec.clone(), task.horizon, 0.25 * jitter))
        }
    }
}

/// How maze tasksets are sampled.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MazeGenMode {
    /// Every task draws corridor directions from all four.
    Standard,
    /// The first (source) task only uses east and north corridors; later
    /// tasks are unrestricted, so transfer must cope with directions never
    /// seen during the source task.
    PartialSource,
}

fn sample_maze(
    rng: &mut impl Rng,
    corridors: usize,
    allowed: &[Dir],
) -> Option<MazeLayout> {
    // Rejection sampling: redraw on self-intersection.
    'attempt: for _ in 0..200 {
        let mut dirs: Vec<Dir> = Vec::with_capacity(corridors);
        for i in 0..corridors {
            let choices: Vec<Dir> = allowed
                .iter()
                .copied()
                .filter(|d| i == 0 || d.axis() != dirs[i - 1].axis())
                .collect();
            if choices.is_empty() {
                continue 'attempt;
            }
            dirs.push(choices[rng.gen_range(0..choices.len())]);
        }
        let cs: Vec<Corridor> = dirs
            .into_iter()
            .map(|dir| Corridor { dir, cells: rng.gen_range(2..=4) })
            .collect();
        if let Ok(layout) = MazeLayout::new(cs) {
            return Some(layout);
        }
    }
    None
}

/// Deterministic maze taskset. Guarantees that the union of corridor
/// directions across all tasks covers all four directions (possible once the
/// taskset has at least two tasks of two corridors each).
pub fn generate_maze_taskset(
    seed: u64,
    n_tasks: usize,
    corridors: usize,
    mode: MazeGenMode,
) -> Result<TasksetSpec> {
    if n_tasks == 0 || corridors == 0 {
        return Err(Error::InvalidInput("need at least one task and corridor".into()));
    }
    let mut rng = derive_rng(seed, "taskset/maze");
    for _ in 0..1000 {
        let mut tasks = Vec::with_capacity(n_tasks);
        let mut seen: Vec<Dir> = Vec::new();
        let mut ok = true;
        for i in 0..n_tasks {
            let allowed: &[Dir] = if i == 0 && mode == MazeGenMode::PartialSource {
                &[Dir::E, Dir::N]
            } else {
                &Dir::ALL
            };
            match sample_maze(&mut rng, corridors, allowed) {
                Some(layout) => {
                    for c in layout.corridors() {
                        if !seen.contains(&c.dir) {
                            seen.push(c.dir);
                        }
                    }
                    tasks.push(TaskSpec::maze(&format!("maze-{}", i + 1), layout));
                }
                None => {
                    ok = false;
                    break;
                }
            }
        }
        let need_all = n_tasks * corridors >= 4;
        if ok && (!need_all || seen.len() == 4) {
            return Ok(TasksetSpec { tasks });
        }
    }
    Err(Error::Generation("maze taskset sampling did not converge".into()))
}

/// Deterministic manipulation taskset: each task moves both boxes, in random
/// order, to two distinct random targets.
pub fn generate_chain_taskset(seed: u64, n_tasks: usize) -> Result<TasksetSpec> {
    if n_tasks == 0 {
        return Err(Error::InvalidInput("need at least one task".into()));
    }
    let mut rng = derive_rng(seed, "taskset/chain");
    let mut tasks = Vec::with_capacity(n_tasks);
    for i in 0..n_tasks {
        let first_box = rng.gen_range(0..N_BOXES);
        let t1 = rng.gen_range(0..N_TARGETS);
        let mut t2 = rng.gen_range(0..N_TARGETS - 1);
        if t2 >= t1 {
            t2 += 1;
        }
        let spec = StageChainSpec::new(vec![
            super::chain::Assignment { box_idx: first_box, target_idx: t1 },
            super::chain::Assignment { box_idx: 1 - first_box, target_idx: t2 },
        ])?;
        tasks.push(TaskSpec::chain(&format!("chain-{}", i + 1), spec));
    }
    Ok(TasksetSpec { tasks })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn maze_taskset_is_seed_deterministic() {
        let a = generate_maze_taskset(9, 5, 3, MazeGenMode::Standard).unwrap();
        let b = generate_maze_taskset(9, 5, 3, MazeGenMode::Standard).unwrap();
        let c = generate_maze_taskset(10, 5, 3, MazeGenMode::Standard).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn maze_taskset_covers_all_directions() {
        for seed in 0..10 {
            let ts = generate_maze_taskset(seed, 5, 3, MazeGenMode::Standard).unwrap();
            assert_eq!(ts.tasks.len(), 5);
            let mut seen = std::collections::HashSet::new();
            for t in &ts.tasks {
                let EnvKind::Maze(l) = &t.kind else { panic!("expected maze") };
                assert_eq!(l.corridors().len(), 3);
                for c in l.corridors() {
                    seen.insert(c.dir);
                }
                assert_eq!(t.horizon, 3 * STEPS_PER_CORRIDOR);
            }
            assert_eq!(seen.len(), 4, "seed {seed} missed a direction");
        }
    }

    #[test]
    fn partial_source_restricts_first_task_only() {
        for seed in 0..10 {
            let ts = generate_maze_taskset(seed, 5, 3, MazeGenMode::PartialSource).unwrap();
            let EnvKind::Maze(l) = &ts.tasks[0].kind else { panic!("expected maze") };
            for c in l.corridors() {
                assert!(matches!(c.dir, Dir::E | Dir::N));
            }
            let mut seen = std::collections::HashSet::new();
            for t in &ts.tasks {
                let EnvKind::Maze(l) = &t.kind else { panic!("expected maze") };
                for c in l.corridors() {
                    seen.insert(c.dir);
                }
            }
            assert_eq!(seen.len(), 4);
        }
    }

    #[test]
    fn chain_taskset_moves_both_boxes_to_distinct_targets() {
        let ts = generate_chain_taskset(3, 6).unwrap();
        assert_eq!(ts, generate_chain_taskset(3, 6).unwrap());
        for t in &ts.tasks {
            let EnvKind::Chain(s) = &t.kind else { panic!("expected chain") };
            assert_eq!(s.assignments.len(), 2);
            let boxes: Vec<usize> = s.assignments.iter().map(|a| a.box_idx).collect();
            let tgts: Vec<usize> = s.assignments.iter().map(|a| a.target_idx).collect();
            assert_ne!(boxes[0], boxes[1]);
            assert_ne!(tgts[0], tgts[1]);
            assert_eq!(t.horizon, 2 * STEPS_PER_ASSIGNMENT);
        }
    }

    #[test]
    fn taskset_text_round_trip() {
        let mut ts = generate_maze_taskset(4, 3, 2, MazeGenMode::Standard).unwrap();
        ts.tasks
            .push(TaskSpec::chain("pp", StageChainSpec::decode("B1T2 B2T3").unwrap()));
        let text = ts.encode();
        let back = TasksetSpec::decode(&text).unwrap();
        assert_eq!(ts, back);
        assert!(TasksetSpec::decode("").is_err());
        assert!(TasksetSpec::decode("maze x horizon=5 threshold=0.8").is_err());
    }

    #[test]
    fn build_env_dimensions() {
        let ts = generate_maze_taskset(1, 1, 2, MazeGenMode::Standard).unwrap();
        let env = build_env(&ts.tasks[0], 1.0);
        assert_eq!(env.obs_dim(), super::super::maze::MAZE_OBS_DIM);
        assert_eq!(env.action_dim(), 2);
        let t = TaskSpec::chain("c", StageChainSpec::decode("B1T1").unwrap());
        let env = build_env(&t, 1.0);
        assert_eq!(env.obs_dim(), super::super::chain::CHAIN_OBS_DIM);
        assert_eq!(env.action_dim(), 3);
        assert_eq!(env.horizon(), STEPS_PER_ASSIGNMENT);
    }
}
