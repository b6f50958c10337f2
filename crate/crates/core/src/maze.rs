//! Sparse-reward continuous maze on the unit square.
//!
//! The agent starts at the center and must reach a small disc near the
//! upper-right corner within a fixed step budget. Walls are zero-thickness
//! segments; any move whose path touches a wall or the outer boundary is
//! rejected and the agent stays where it was.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codec::{Decoder, Encoder};
use crate::env::{Environment, StepResult};
use crate::error::{Error, Result};

/// Contact distance between a move and a wall.
pub const CONTACT_TOL: f64 = 1e-12;

pub type Point = [f64; 2];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct Segment {
    pub a: Point,
    pub b: Point,
}

impl Segment {
    pub fn new(a: Point, b: Point) -> Self {
        Self { a, b }
    }
}

impl From<[f64; 4]> for Segment {
    fn from(v: [f64; 4]) -> Self {
        Segment::new([v[0], v[1]], [v[2], v[3]])
    }
}

impl From<Segment> for [f64; 4] {
    fn from(s: Segment) -> Self {
        [s.a[0], s.a[1], s.b[0], s.b[1]]
    }
}

fn sub(p: Point, q: Point) -> Point {
    [p[0] - q[0], p[1] - q[1]]
}

fn dot(p: Point, q: Point) -> f64 {
    p[0] * q[0] + p[1] * q[1]
}

fn cross(p: Point, q: Point) -> f64 {
    p[0] * q[1] - p[1] * q[0]
}

fn dist(p: Point, q: Point) -> f64 {
    let d = sub(p, q);
    dot(d, d).sqrt()
}

fn point_segment_distance(p: Point, s: &Segment) -> f64 {
    let d = sub(s.b, s.a);
    let len2 = dot(d, d);
    if len2 == 0.0 {
        return dist(p, s.a);
    }
    let t = (dot(sub(p, s.a), d) / len2).clamp(0.0, 1.0);
    dist(p, [s.a[0] + t * d[0], s.a[1] + t * d[1]])
}

/// Minimum Euclidean distance between two closed segments (zero when they cross).
pub fn segment_distance(s: &Segment, t: &Segment) -> f64 {
    let d1 = cross(sub(t.b, t.a), sub(s.a, t.a));
    let d2 = cross(sub(t.b, t.a), sub(s.b, t.a));
    let d3 = cross(sub(s.b, s.a), sub(t.a, s.a));
    let d4 = cross(sub(s.b, s.a), sub(t.b, s.a));
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return 0.0;
    }
    point_segment_distance(s.a, t)
        .min(point_segment_distance(s.b, t))
        .min(point_segment_distance(t.a, s))
        .min(point_segment_distance(t.b, s))
}

fn default_start() -> Point {
    [0.5, 0.5]
}

fn default_goal() -> Point {
    [5.0 / 6.0, 5.0 / 6.0]
}

fn default_goal_radius() -> f64 {
    0.1
}

fn default_max_steps() -> usize {
    50
}

fn default_action_bound() -> f64 {
    0.2
}

fn default_success_reward() -> f64 {
    100.0
}

/// Three-sided enclosure around the start, open toward the left.
pub fn default_walls() -> Vec<Segment> {
    let (lo, hi) = (1.0 / 3.0, 2.0 / 3.0);
    vec![
        Segment::new([hi, lo], [hi, hi]),
        Segment::new([lo, lo], [hi, lo]),
        Segment::new([lo, hi], [hi, hi]),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MazeConfig {
    #[serde(default = "default_walls")]
    pub walls: Vec<Segment>,
    #[serde(default = "default_start")]
    pub start: Point,
    #[serde(default = "default_goal")]
    pub goal: Point,
    #[serde(default = "default_goal_radius")]
    pub goal_radius: f64,
    #[serde(default = "default_max_steps")]
    pub max_steps: usize,
    #[serde(default = "default_action_bound")]
    pub action_bound: f64,
    #[serde(default = "default_success_reward")]
    pub success_reward: f64,
}

impl Default for MazeConfig {
    fn default() -> Self {
        Self {
            walls: default_walls(),
            start: default_start(),
            goal: default_goal(),
            goal_radius: default_goal_radius(),
            max_steps: default_max_steps(),
            action_bound: default_action_bound(),
            success_reward: default_success_reward(),
        }
    }
}

fn boundary() -> [Segment; 4] {
    [
        Segment::new([0.0, 0.0], [1.0, 0.0]),
        Segment::new([1.0, 0.0], [1.0, 1.0]),
        Segment::new([1.0, 1.0], [0.0, 1.0]),
        Segment::new([0.0, 1.0], [0.0, 0.0]),
    ]
}

fn in_unit_square(p: Point) -> bool {
    (0.0..=1.0).contains(&p[0]) && (0.0..=1.0).contains(&p[1])
}

impl MazeConfig {
    pub fn validate(&self) -> Result<()> {
        let inside = |p: Point| p[0] > 0.0 && p[0] < 1.0 && p[1] > 0.0 && p[1] < 1.0;
        if !inside(self.start) {
            return Err(Error::field("start", "must lie strictly inside the unit square"));
        }
        if !inside(self.goal) {
            return Err(Error::field("goal", "must lie strictly inside the unit square"));
        }
        if !(self.goal_radius > 0.0) {
            return Err(Error::field("goal_radius", "must be positive"));
        }
        if self.max_steps == 0 {
            return Err(Error::field("max_steps", "must be at least 1"));
        }
        if !(self.action_bound > 0.0) {
            return Err(Error::field("action_bound", "must be positive"));
        }
        if !(self.success_reward > 0.0 && self.success_reward.is_finite()) {
            return Err(Error::field("success_reward", "must be positive"));
        }
        for (i, w) in self.walls.iter().enumerate() {
            if !in_unit_square(w.a) || !in_unit_square(w.b) {
                return Err(Error::field("walls", format!("wall {i} leaves the unit square")));
            }
            if point_segment_distance(self.goal, w) <= self.goal_radius {
                return Err(Error::field("walls", format!("wall {i} intersects the goal region")));
            }
            if point_segment_distance(self.start, w) <= CONTACT_TOL {
                return Err(Error::field("walls", format!("wall {i} passes through the start")));
            }
        }
        Ok(())
    }

    /// Whether the straight move `from -> to` touches any wall or the boundary.
    pub fn blocked(&self, from: Point, to: Point) -> bool {
        let path = Segment::new(from, to);
        self.walls
            .iter()
            .chain(boundary().iter())
            .any(|w| segment_distance(&path, w) <= CONTACT_TOL)
    }
}

#[derive(Debug, Clone)]
pub struct MazeEnv {
    config: MazeConfig,
    noise_scale: f64,
    position: Point,
    step_count: usize,
    noise: Point,
    finished: bool,
}

impl MazeEnv {
    pub fn new(config: MazeConfig, noise_scale: f64) -> Result<Self> {
        config.validate()?;
        if !(noise_scale >= 0.0) {
            return Err(Error::config(format!("noise scale must be non-negative, got {noise_scale}")));
        }
        let start = config.start;
        Ok(Self {
            config,
            noise_scale,
            position: start,
            step_count: 0,
            noise: [0.0, 0.0],
            finished: true,
        })
    }

    pub fn config(&self) -> &MazeConfig {
        &self.config
    }

    pub fn position(&self) -> Point {
        self.position
    }

    pub fn noise(&self) -> Point {
        self.noise
    }

    pub fn step_count(&self) -> usize {
        self.step_count
    }

    pub fn noise_scale(&self) -> f64 {
        self.noise_scale
    }

    fn observe(&self) -> Vec<f64> {
        vec![self.position[0] + self.noise[0], self.position[1] + self.noise[1]]
    }
}

impl Environment for MazeEnv {
    fn observation_dim(&self) -> usize {
        2
    }

    fn action_dim(&self) -> usize {
        2
    }

    fn action_bound(&self) -> f64 {
        self.config.action_bound
    }

    fn reset(&mut self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let s = self.noise_scale;
        let mut draw = || rng.gen::<f64>() * 2.0 * s - s;
        self.noise = [draw(), draw()];
        self.position = self.config.start;
        self.step_count = 0;
        self.finished = false;
        self.observe()
    }

    fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        if self.finished {
            return Err(Error::EpisodeFinished);
        }
        Error::check_len("action", 2, action.len())?;
        let bound = self.config.action_bound;
        let a = [action[0].clamp(-bound, bound), action[1].clamp(-bound, bound)];
        let proposed = [self.position[0] + a[0], self.position[1] + a[1]];
        if !self.config.blocked(self.position, proposed) {
            self.position = proposed;
        }
        self.step_count += 1;

        let done = dist(self.position, self.config.goal) < self.config.goal_radius;
        let truncated = !done && self.step_count >= self.config.max_steps;
        self.finished = done || truncated;
        Ok(StepResult {
            observation: self.observe(),
            reward: if done { self.config.success_reward } else { 0.0 },
            done,
            truncated,
        })
    }

    fn true_state(&self) -> Vec<f64> {
        self.position.to_vec()
    }

    fn encode_state(&self, enc: &mut Encoder) {
        for v in self.position.iter().chain(self.noise.iter()) {
            enc.f64(*v);
        }
        enc.usize(self.step_count);
        enc.bool(self.finished);
    }

    fn decode_state(&mut self, dec: &mut Decoder) -> Result<()> {
        self.position = [dec.f64()?, dec.f64()?];
        self.noise = [dec.f64()?, dec.f64()?];
        self.step_count = dec.usize()?;
        self.finished = dec.bool()?;
        Ok(())
    }
}
