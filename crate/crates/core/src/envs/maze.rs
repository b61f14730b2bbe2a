//! Continuous point-mass maze.
//!
//! Free space is a union of axis-aligned rectangles, one per corridor.
//! Corridors are chains of cells on a 4-unit pitch, 2 units wide; consecutive
//! corridors are perpendicular and share exactly one corner cell. A damped
//! point mass slides along walls (axis-wise projection) and is rewarded for
//! progress along the corridor path toward the goal.

use super::{Axis, Environment, RegionInfo, StepResult};
use crate::{Error, Result};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Corridor pitch between cell centers, in maze units.
pub const CELL_PITCH: f64 = 4.0;
/// Half of the corridor width.
pub const HALF_WIDTH: f64 = 1.0;
pub const DRAG: f64 = 0.1;
pub const ACCEL: f64 = 0.1;
pub const V_MAX: f64 = 0.5;
pub const RESET_JITTER: f64 = 0.25;
pub const GOAL_BONUS: f64 = 10.0;
pub const ACTION_COST: f64 = 0.005;
/// Documented bound on the absolute per-step reward.
pub const REWARD_BOUND: f64 = 15.0;
/// Horizon per corridor.
pub const STEPS_PER_CORRIDOR: usize = 60;
pub const MAZE_OBS_DIM: usize = 9;

const WALL_MARGIN: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Dir {
    N,
    S,
    E,
    W,
}

impl Dir {
    pub fn unit(self) -> [f64; 2] {
        match self {
            Dir::N => [0.0, 1.0],
            Dir::S => [0.0, -1.0],
            Dir::E => [1.0, 0.0],
            Dir::W => [-1.0, 0.0],
        }
    }

    pub fn axis(self) -> Axis {
        match self {
            Dir::E | Dir::W => Axis::Horizontal,
            Dir::N | Dir::S => Axis::Vertical,
        }
    }

    pub fn letter(self) -> char {
        match self {
            Dir::N => 'N',
            Dir::S => 'S',
            Dir::E => 'E',
            Dir::W => 'W',
        }
    }

    pub fn from_letter(c: char) -> Result<Dir> {
        match c {
            'N' => Ok(Dir::N),
            'S' => Ok(Dir::S),
            'E' => Ok(Dir::E),
            'W' => Ok(Dir::W),
            _ => Err(Error::InvalidInput(format!("bad direction letter {c:?}"))),
        }
    }

    pub const ALL: [Dir; 4] = [Dir::N, Dir::S, Dir::E, Dir::W];
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Corridor {
    pub dir: Dir,
    /// Length in cells (4 units each), beyond the shared corner cell.
    pub cells: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Rect {
    min: [f64; 2],
    max: [f64; 2],
}

impl Rect {
    fn contains(&self, p: [f64; 2]) -> bool {
        p[0] >= self.min[0] && p[0] <= self.max[0] && p[1] >= self.min[1] && p[1] <= self.max[1]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MazeLayout {
    corridors: Vec<Corridor>,
    /// Corner/way points: waypoints[i] is where corridor i starts; the last
    /// entry is the goal cell center. waypoints[0] = origin.
    waypoints: Vec<[f64; 2]>,
    rects: Vec<Rect>,
}

impl MazeLayout {
    pub fn new(corridors: Vec<Corridor>) -> Result<Self> {
        if corridors.is_empty() {
            return Err(Error::InvalidInput("maze needs at least one corridor".into()));
        }
        if corridors.iter().any(|c| c.cells == 0) {
            return Err(Error::InvalidInput("zero-length corridor".into()));
        }
        for w in corridors.windows(2) {
            if w[0].dir.axis() == w[1].dir.axis() {
                return Err(Error::InvalidInput(
                    "consecutive corridors must be perpendicular".into(),
                ));
            }
        }
        let mut waypoints = vec![[0.0, 0.0]];
        let mut cells: Vec<(i64, i64)> = vec![(0, 0)];
        for c in &corridors {
            let u = c.dir.unit();
            let last = *waypoints.last().unwrap();
            for j in 1..=c.cells {
                let p = [
                    last[0] + u[0] * CELL_PITCH * j as f64,
                    last[1] + u[1] * CELL_PITCH * j as f64,
                ];
                cells.push((p[0].round() as i64, p[1].round() as i64));
            }
            waypoints.push([
                last[0] + u[0] * CELL_PITCH * c.cells as f64,
                last[1] + u[1] * CELL_PITCH * c.cells as f64,
            ]);
        }
        let mut seen = std::collections::HashSet::new();
        for c in &cells {
            if !seen.insert(*c) {
                return Err(Error::Generation("maze path self-intersects".into()));
            }
        }
        let rects = corridors
            .iter()
            .enumerate()
            .map(|(i, _)| {
                let (a, b) = (waypoints[i], waypoints[i + 1]);
                Rect {
                    min: [a[0].min(b[0]) - HALF_WIDTH, a[1].min(b[1]) - HALF_WIDTH],
                    max: [a[0].max(b[0]) + HALF_WIDTH, a[1].max(b[1]) + HALF_WIDTH],
                }
            })
            .collect();
        Ok(Self { corridors, waypoints, rects })
    }

    pub fn corridors(&self) -> &[Corridor] {
        &self.corridors
    }

    pub fn start(&self) -> [f64; 2] {
        self.waypoints[0]
    }

    pub fn goal(&self) -> [f64; 2] {
        *self.waypoints.last().unwrap()
    }

    /// Upper bound on any straight-line distance within the maze.
    pub fn diameter(&self) -> f64 {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for r in &self.rects {
            for d in 0..2 {
                lo[d] = lo[d].min(r.min[d]);
                hi[d] = hi[d].max(r.max[d]);
            }
        }
        (hi[0] - lo[0]) + (hi[1] - lo[1])
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        self.rects.iter().any(|r| r.contains(p))
    }

    /// Indices of corridors whose rectangle contains `p`, ascending. Two
    /// entries exactly when `p` is in a shared corner cell.
    pub fn corridor_indices(&self, p: [f64; 2]) -> Vec<usize> {
        self.rects
            .iter()
            .enumerate()
            .filter(|(_, r)| r.contains(p))
            .map(|(i, _)| i)
            .collect()
    }

    /// Ground-truth directions at `p` (earlier corridor first).
    pub fn region_dirs(&self, p: [f64; 2]) -> Vec<Dir> {
        self.corridor_indices(p).into_iter().map(|i| self.corridors[i].dir).collect()
    }

    /// Distance along an axis-aligned ray from `p` (inside free space) to the
    /// boundary of the free-space union. Exact interval arithmetic.
    fn ray_exit(&self, p: [f64; 2], axis: usize, sign: f64) -> Result<f64> {
        let perp = 1 - axis;
        let mut intervals: Vec<(f64, f64)> = Vec::new();
        for r in &self.rects {
            if p[perp] < r.min[perp] || p[perp] > r.max[perp] {
                continue;
            }
            let (t0, t1) = if sign > 0.0 {
                (r.min[axis] - p[axis], r.max[axis] - p[axis])
            } else {
                (p[axis] - r.max[axis], p[axis] - r.min[axis])
            };
            if t1 >= 0.0 {
                intervals.push((t0, t1));
            }
        }
        intervals.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let mut end: Option<f64> = None;
        for (t0, t1) in intervals {
            match end {
                None => {
                    if t0 <= 0.0 && t1 >= 0.0 {
                        end = Some(t1);
                    }
                }
                Some(e) => {
                    if t0 <= e {
                        end = Some(e.max(t1));
                    }
                }
            }
        }
        end.ok_or_else(|| Error::InvalidInput("position outside free space".into()))
    }

    /// Wall distances along +x, -x, +y, -y.
    pub fn lidar(&self, p: [f64; 2]) -> Result<[f64; 4]> {
        Ok([
            self.ray_exit(p, 0, 1.0)?,
            self.ray_exit(p, 0, -1.0)?,
            self.ray_exit(p, 1, 1.0)?,
            self.ray_exit(p, 1, -1.0)?,
        ])
    }

    pub fn in_goal_cell(&self, p: [f64; 2]) -> bool {
        let g = self.goal();
        (p[0] - g[0]).abs() <= HALF_WIDTH && (p[1] - g[1]).abs() <= HALF_WIDTH
    }

    /// Manhattan distance to the goal along the corridor path; exactly zero
    /// inside the goal cell.
    pub fn path_distance_to_goal(&self, p: [f64; 2]) -> f64 {
        if self.in_goal_cell(p) {
            return 0.0;
        }
        let idx = self.corridor_indices(p);
        // Fall back to the nearest corridor when called on an out-of-space
        // probe point (should not happen for env states).
        let i = idx.last().copied().unwrap_or(0);
        let u = self.corridors[i].dir.unit();
        let w = self.waypoints[i];
        let len = CELL_PITCH * self.corridors[i].cells as f64;
        let t = ((p[0] - w[0]) * u[0] + (p[1] - w[1]) * u[1]).clamp(0.0, len);
        let cross = ((p[0] - w[0]) * u[1] - (p[1] - w[1]) * u[0]).abs();
        let tail: f64 = self.corridors[i + 1..]
            .iter()
            .map(|c| CELL_PITCH * c.cells as f64)
            .sum();
        (len - t) + cross + tail
    }

    /// Text encoding, e.g. `E4 N3 W2` (direction letter + cell count).
    pub fn encode(&self) -> String {
        self.corridors
            .iter()
            .map(|c| format!("{}{}", c.dir.letter(), c.cells))
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn decode(text: &str) -> Result<MazeLayout> {
        let mut corridors = Vec::new();
        for tok in text.split_whitespace() {
            let mut chars = tok.chars();
            let dir = Dir::from_letter(
                chars.next().ok_or_else(|| Error::InvalidInput("empty corridor token".into()))?,
            )?;
            let cells: usize = chars
                .as_str()
                .parse()
                .map_err(|_| Error::InvalidInput(format!("bad corridor token {tok:?}")))?;
            corridors.push(Corridor { dir, cells });
        }
        MazeLayout::new(corridors)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PointMazeState {
    pub position: [f64; 2],
    pub velocity: [f64; 2],
    pub steps_elapsed: usize,
}

/// Point-mass maze environment.
pub struct MazeEnv {
    layout: MazeLayout,
    horizon: usize,
    jitter: f64,
    state: PointMazeState,
    prev_dist: f64,
}

impl MazeEnv {
    pub fn new(layout: MazeLayout, horizon: usize, jitter: f64) -> Self {
        let start = layout.start();
        let prev_dist = layout.path_distance_to_goal(start);
        Self {
            layout,
            horizon,
            jitter,
            state: PointMazeState { position: start, velocity: [0.0, 0.0], steps_elapsed: 0 },
            prev_dist,
        }
    }

    pub fn layout(&self) -> &MazeLayout {
        &self.layout
    }

    pub fn state(&self) -> PointMazeState {
        self.state
    }

    fn region_of(&self, pos: [f64; 2], vel: [f64; 2]) -> RegionInfo {
        RegionInfo {
            dirs: self.layout.region_dirs(pos),
            vel_axis: Some(if vel[0].abs() >= vel[1].abs() {
                Axis::Horizontal
            } else {
                Axis::Vertical
            }),
            stage: None,
        }
    }

    fn obs_of(&self, pos: [f64; 2], vel: [f64; 2]) -> Vec<f64> {
        let lid = self.layout.lidar(pos).expect("state inside free space");
        vec![
            pos[0],
            pos[1],
            vel[0],
            vel[1],
            lid[0],
            lid[1],
            lid[2],
            lid[3],
            self.layout.path_distance_to_goal(pos),
        ]
    }
}

impl Environment for MazeEnv {
    fn obs_dim(&self) -> usize {
        MAZE_OBS_DIM
    }

    fn action_dim(&self) -> usize {
        2
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn reset(&mut self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let start = self.layout.start();
        let jx: f64 = rng.gen_range(-self.jitter..=self.jitter);
        let jy: f64 = rng.gen_range(-self.jitter..=self.jitter);
        self.state = PointMazeState {
            position: [start[0] + jx, start[1] + jy],
            velocity: [0.0, 0.0],
            steps_elapsed: 0,
        };
        self.prev_dist = self.layout.path_distance_to_goal(self.state.position);
        self.observe()
    }

    fn step(&mut self, action: &[f64]) -> StepResult {
        let region = self.region_of(self.state.position, self.state.velocity);
        let ax = action.first().copied().unwrap_or(0.0).clamp(-1.0, 1.0);
        let ay = action.get(1).copied().unwrap_or(0.0).clamp(-1.0, 1.0);
        let mut v = [
            self.state.velocity[0] * (1.0 - DRAG) + ax * ACCEL,
            self.state.velocity[1] * (1.0 - DRAG) + ay * ACCEL,
        ];
        let speed = (v[0] * v[0] + v[1] * v[1]).sqrt();
        if speed > V_MAX {
            let s = V_MAX / speed;
            v[0] *= s;
            v[1] *= s;
        }
        let mut p = self.state.position;
        // Axis-wise projection: clip each displacement at the wall and kill
        // the normal velocity component on contact.
        for axis in 0..2 {
            let d = v[axis];
            if d == 0.0 {
                continue;
            }
            let allowed =
                (self.layout.ray_exit(p, axis, d.signum()).unwrap_or(0.0) - WALL_MARGIN).max(0.0);
            if d.abs() > allowed {
                p[axis] += d.signum() * allowed;
                v[axis] = 0.0;
            } else {
                p[axis] += d;
            }
        }
        self.state.position = p;
        self.state.velocity = v;
        self.state.steps_elapsed += 1;

        let dist = self.layout.path_distance_to_goal(p);
        let success = self.layout.in_goal_cell(p);
        let mut reward = (self.prev_dist - dist) - ACTION_COST * (ax * ax + ay * ay);
        if success {
            reward += GOAL_BONUS;
        }
        self.prev_dist = dist;
        let done = success || self.state.steps_elapsed >= self.horizon;
        StepResult { obs: self.observe(), reward, done, success, region }
    }

    fn region(&self) -> RegionInfo {
        self.region_of(self.state.position, self.state.velocity)
    }

    fn observe(&self) -> Vec<f64> {
        self.obs_of(self.state.position, self.state.velocity)
    }
}
