//! 2D point-mass mazes with sparse success rewards.
//!
//! The world is a `width × height` grid of unit cells; cell `(cx, cy)` covers
//! `[cx, cx+1) × [cy, cy+1)`. A state is a point with a velocity. Walls are
//! blocked cells and the grid boundary acts as a wall on every side.

use std::fmt;
use std::path::Path;

use crate::error::{LespError, Result};

pub const ACCEL: f64 = 0.5;
pub const FRICTION: f64 = 0.9;
pub const V_MAX: f64 = 1.0;

/// Gap kept between a point and the wall face it was pushed against, so the
/// point stays inside its free cell under floor-based cell lookup.
const SKIN: f64 = 1e-9;

pub const BUILTIN_NAMES: [&str; 3] = ["u_maze", "w_maze", "four_rooms"];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StateVec {
    pub pos: [f64; 2],
    pub vel: [f64; 2],
}

impl StateVec {
    pub fn at(x: f64, y: f64) -> Self {
        Self { pos: [x, y], vel: [0.0, 0.0] }
    }

    pub fn is_finite(&self) -> bool {
        self.pos.iter().chain(&self.vel).all(|v| v.is_finite())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnvStep {
    pub next_state: StateVec,
    pub reward: f64,
    pub done: bool,
    pub success: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MazeSpec {
    pub name: String,
    pub width: usize,
    pub height: usize,
    /// Row-major, `walls[cy * width + cx]`, `cy = 0` at the bottom.
    walls: Vec<bool>,
    pub start: [f64; 2],
    pub goal: [f64; 2],
    pub success_radius: f64,
    pub horizon: usize,
}

impl MazeSpec {
    pub fn new(
        name: &str,
        width: usize,
        height: usize,
        walls: Vec<bool>,
        start: [f64; 2],
        goal: [f64; 2],
        success_radius: f64,
        horizon: usize,
    ) -> Result<Self> {
        if width == 0 || height == 0 || walls.len() != width * height {
            return Err(LespError::InvalidArgument("wall grid does not match bounds".into()));
        }
        if !(success_radius > 0.0) || horizon == 0 {
            return Err(LespError::InvalidArgument("success_radius and horizon must be positive".into()));
        }
        let spec = Self { name: name.to_string(), width, height, walls, start, goal, success_radius, horizon };
        for (label, p) in [("start", start), ("goal", goal)] {
            if !spec.is_free(p) {
                return Err(LespError::InvalidArgument(format!("{label} {p:?} is outside bounds or inside a wall")));
            }
        }
        Ok(spec)
    }

    pub fn builtin(name: &str) -> Result<Self> {
        let text = match name {
            "u_maze" => U_MAZE,
            "w_maze" => W_MAZE,
            "four_rooms" => FOUR_ROOMS,
            other => {
                return Err(LespError::Config(format!(
                    "unknown environment {other:?}; valid: {}",
                    BUILTIN_NAMES.join(", ")
                )))
            }
        };
        Self::parse(text)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Parses the grid format: `key=value` header lines, then grid rows from
    /// top (`y = height - 1`) to bottom. `#` wall, `.` free, `S` start,
    /// `G` goal. `start=x,y` / `goal=x,y` override the markers (markers sit
    /// at cell centres).
    pub fn parse(text: &str) -> Result<Self> {
        let mut name = String::from("custom");
        let mut success_radius = 1.5;
        let mut horizon = 500usize;
        let mut start = None;
        let mut goal = None;
        let mut rows: Vec<&str> = Vec::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            if let Some((key, value)) = line.split_once('=') {
                let value = value.trim();
                match key.trim() {
                    "name" => name = value.to_string(),
                    "success_radius" => success_radius = parse_num(key, value)?,
                    "horizon" => horizon = parse_num(key, value)?,
                    "start" => start = Some(parse_point(value)?),
                    "goal" => goal = Some(parse_point(value)?),
                    other => return Err(LespError::Parse(format!("unknown maze header key {other:?}"))),
                }
            } else {
                rows.push(line);
            }
        }
        let height = rows.len();
        let width = rows.first().map(|r| r.chars().count()).unwrap_or(0);
        if height == 0 || rows.iter().any(|r| r.chars().count() != width) {
            return Err(LespError::Parse("maze grid rows must be non-empty and equal length".into()));
        }
        let mut walls = vec![false; width * height];
        let mut marker_start = None;
        let mut marker_goal = None;
        for (r, row) in rows.iter().enumerate() {
            let cy = height - 1 - r;
            for (cx, ch) in row.chars().enumerate() {
                let centre = [cx as f64 + 0.5, cy as f64 + 0.5];
                match ch {
                    '#' => walls[cy * width + cx] = true,
                    '.' => {}
                    'S' => marker_start = Some(centre),
                    'G' => marker_goal = Some(centre),
                    other => return Err(LespError::Parse(format!("unexpected grid character {other:?}"))),
                }
            }
        }
        let start = start.or(marker_start).ok_or_else(|| LespError::Parse("maze has no start".into()))?;
        let goal = goal.or(marker_goal).ok_or_else(|| LespError::Parse("maze has no goal".into()))?;
        Self::new(&name, width, height, walls, start, goal, success_radius, horizon)
    }

    pub fn is_wall_cell(&self, cx: i64, cy: i64) -> bool {
        if cx < 0 || cy < 0 || cx >= self.width as i64 || cy >= self.height as i64 {
            return true;
        }
        self.walls[cy as usize * self.width + cx as usize]
    }

    /// True when `p` lies inside the bounds and in a free cell.
    pub fn is_free(&self, p: [f64; 2]) -> bool {
        if !(p[0] >= 0.0 && p[1] >= 0.0 && p[0] <= self.width as f64 && p[1] <= self.height as f64) {
            return false;
        }
        let cx = (p[0].floor() as i64).min(self.width as i64 - 1);
        let cy = (p[1].floor() as i64).min(self.height as i64 - 1);
        !self.is_wall_cell(cx, cy)
    }

    pub fn free_cells(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.height).flat_map(move |cy| (0..self.width).map(move |cx| (cx, cy))).filter(|&(cx, cy)| !self.walls[cy * self.width + cx])
    }

    pub fn reset(&self, _seed: u64) -> StateVec {
        StateVec::at(self.start[0], self.start[1])
    }

    pub fn is_success(&self, p: [f64; 2]) -> bool {
        let dx = p[0] - self.goal[0];
        let dy = p[1] - self.goal[1];
        (dx * dx + dy * dy).sqrt() <= self.success_radius
    }

    /// One step of the point-mass dynamics. Returns the next state, the
    /// external reward and whether the goal was reached.
    pub fn transition(&self, state: &StateVec, action: [f64; 2]) -> Result<(StateVec, f64, bool)> {
        if !action.iter().all(|a| a.is_finite()) {
            return Err(LespError::InvalidArgument(format!("non-finite action {action:?}")));
        }
        let mut vel = [0.0; 2];
        for i in 0..2 {
            let a = action[i].clamp(-1.0, 1.0);
            vel[i] = (state.vel[i] * FRICTION + a * ACCEL).clamp(-V_MAX, V_MAX);
        }
        let mut pos = state.pos;
        for axis in 0..2 {
            let (coord, hit) = self.sweep(pos, vel[axis], axis);
            pos[axis] = coord;
            if hit {
                vel[axis] = 0.0;
            }
        }
        let next = StateVec { pos, vel };
        let success = self.is_success(pos);
        Ok((next, if success { 1.0 } else { 0.0 }, success))
    }

    /// Moves along one axis, stopping at the first blocked cell face.
    fn sweep(&self, pos: [f64; 2], delta: f64, axis: usize) -> (f64, bool) {
        let coord = pos[axis];
        let other = pos[1 - axis];
        let other_limit = if axis == 0 { self.height } else { self.width } as i64;
        let lane = (other.floor() as i64).min(other_limit - 1);
        let blocked = |cell: i64| {
            if axis == 0 {
                self.is_wall_cell(cell, lane)
            } else {
                self.is_wall_cell(lane, cell)
            }
        };
        let target = coord + delta;
        let from = coord.floor() as i64;
        let to = target.floor() as i64;
        if delta > 0.0 {
            for cell in from + 1..=to {
                if blocked(cell) {
                    return (cell as f64 - SKIN, true);
                }
            }
        } else if delta < 0.0 {
            for cell in (to..from).rev() {
                if blocked(cell) {
                    return ((cell + 1) as f64, true);
                }
            }
        }
        (target, false)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "name={}\nsuccess_radius={}\nhorizon={}\nstart={},{}\ngoal={},{}\n",
            self.name, self.success_radius, self.horizon, self.start[0], self.start[1], self.goal[0], self.goal[1]
        );
        for cy in (0..self.height).rev() {
            for cx in 0..self.width {
                out.push(if self.walls[cy * self.width + cx] { '#' } else { '.' });
            }
            out.push('\n');
        }
        out
    }
}

pub const STATE_DIM: usize = 4;
pub const ACTION_DIM: usize = 2;

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| LespError::Parse(format!("bad value {value:?} for {key}")))
}

fn parse_point(value: &str) -> Result<[f64; 2]> {
    let (x, y) = value.split_once(',').ok_or_else(|| LespError::Parse(format!("bad point {value:?}")))?;
    Ok([parse_num("x", x.trim())?, parse_num("y", y.trim())?])
}

/// A maze plus the running step counter of the current episode.
#[derive(Clone, Debug)]
pub struct MazeEnv {
    spec: MazeSpec,
    state: StateVec,
    t: usize,
}

impl MazeEnv {
    pub fn new(spec: MazeSpec) -> Self {
        let state = spec.reset(0);
        Self { spec, state, t: 0 }
    }

    pub fn spec(&self) -> &MazeSpec {
        &self.spec
    }

    pub fn state(&self) -> StateVec {
        self.state
    }

    pub fn step_index(&self) -> usize {
        self.t
    }

    pub fn reset(&mut self, seed: u64) -> StateVec {
        self.state = self.spec.reset(seed);
        self.t = 0;
        self.state
    }

    pub fn step(&mut self, action: [f64; 2]) -> Result<EnvStep> {
        let (next, reward, success) = self.spec.transition(&self.state, action)?;
        self.state = next;
        self.t += 1;
        Ok(EnvStep { next_state: next, reward, done: success || self.t >= self.spec.horizon, success })
    }
}

impl fmt::Display for MazeSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_text())
    }
}

const U_MAZE: &str = "\
name=u_maze
success_radius=1.5
horizon=500
start=1,1
goal=1,6
........
........
........
######..
######..
........
........
........
";

const FOUR_ROOMS: &str = "\
name=four_rooms
success_radius=1.5
horizon=500
start=1,1
goal=16,16
........#.........
........#.........
........#.........
..................
..................
........#.........
........#.........
........#.........
........#.........
###..#######..####
........#.........
........#.........
........#.........
..................
..................
........#.........
........#.........
........#.........
";

const W_MAZE: &str = "\
name=w_maze
success_radius=1.5
horizon=500
start=14,0
goal=14,14
................................
................................
................................
................................
................................
................................
..................##............
..................##............
..................##............
..................##............
..................##............
..................##............
..................##............
..................##............
..................##............
..................##............
..................##............
..................##............
..................##............
..................##............
..................##............
..................##............
..................##............
..................##............
..................##............
########################........
########################........
................................
................................
................................
................................
................................
";
