//! Multi-agent unicycle environment: dynamics, local observations, the shared
//! piecewise reward and the episode lifecycle.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formation::{
    centroid, collision_condition, formation_condition, place_formation, success_condition,
    FormationSpec, Thresholds,
};
use crate::se2::{normalize_angle, to_local, Point2, Pose};

/// Neighbor slots per observation. Agents observing fewer agents are zero-padded.
pub const MAX_NEIGHBORS: usize = 2;
/// Flattened observation width: `(x, y, d̄)` per neighbor slot plus the goal `(x, y)`.
pub const OBS_DIM: usize = 3 * MAX_NEIGHBORS + 2;
/// Per-agent action width `(v, w)`.
pub const ACTION_DIM: usize = 2;

/// Width of the centroid-relative true state for `n` agents.
pub fn state_dim(n_agents: usize) -> usize {
    4 * n_agents + 2
}

/// Shared reward values for the four outcome branches.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    pub edge: f64,
    pub collision: f64,
    pub goal: f64,
    pub penalty: f64,
}

impl RewardConfig {
    /// Range of achievable discounted returns: at most one terminal reward
    /// plus a discounted stream of per-step rewards. `None` when `gamma >= 1`.
    pub fn return_bounds(&self, gamma: f64) -> Option<[f64; 2]> {
        if !(0.0..1.0).contains(&gamma) {
            return None;
        }
        let horizon = 1.0 / (1.0 - gamma);
        let low = self.collision.min(self.goal).min(0.0) + self.penalty.min(self.edge).min(0.0) * horizon;
        let high = self.collision.max(self.goal).max(0.0) + self.penalty.max(self.edge).max(0.0) * horizon;
        Some([low, high])
    }
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            edge: 0.1,
            collision: -100.0,
            goal: 50.0,
            penalty: -0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub arena_side: f64,
    pub max_steps: usize,
    pub dt: f64,
    pub v_max: f64,
    pub w_max: f64,
    pub thresholds: Thresholds,
    pub rewards: RewardConfig,
    /// When set, goals are drawn within this distance of the initial centroid
    /// instead of anywhere in the arena.
    pub goal_radius: Option<f64>,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            arena_side: 10.0,
            max_steps: 120,
            dt: 0.1,
            v_max: 1.0,
            w_max: PI,
            thresholds: Thresholds::default(),
            rewards: RewardConfig::default(),
            goal_radius: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AgentAction {
    /// Linear velocity, m/s.
    pub v: f64,
    /// Angular velocity, rad/s.
    pub w: f64,
}

impl AgentAction {
    pub const ZERO: AgentAction = AgentAction { v: 0.0, w: 0.0 };

    pub fn new(v: f64, w: f64) -> Self {
        Self { v, w }
    }

    /// Clamp into `[0, v_max] × [-w_max, w_max]`. NaN components become 0.
    pub fn clamped(&self, v_max: f64, w_max: f64) -> Self {
        let fix = |x: f64| if x.is_nan() { 0.0 } else { x };
        Self {
            v: fix(self.v).clamp(0.0, v_max),
            w: fix(self.w).clamp(-w_max, w_max),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DoneReason {
    Running,
    Collision,
    Success,
    Timeout,
}

impl DoneReason {
    pub fn is_done(self) -> bool {
        self != DoneReason::Running
    }

    /// Collision and success end the task itself; a timeout only cuts the episode short.
    pub fn is_terminal(self) -> bool {
        matches!(self, DoneReason::Collision | DoneReason::Success)
    }
}

impl fmt::Display for DoneReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            DoneReason::Running => "Running",
            DoneReason::Collision => "Collision",
            DoneReason::Success => "Success",
            DoneReason::Timeout => "Timeout",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Neighbor {
    /// Neighbor position in the observer's frame.
    pub rel: Point2,
    /// Desired distance to the neighbor; 0 for padding.
    pub length: f64,
}

/// What one agent sees, all in its own local frame.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Observation {
    pub neighbors: [Neighbor; MAX_NEIGHBORS],
    pub goal: Point2,
}

impl Observation {
    pub fn write_features(&self, out: &mut [f64]) {
        for (k, nb) in self.neighbors.iter().enumerate() {
            out[3 * k] = nb.rel.x;
            out[3 * k + 1] = nb.rel.y;
            out[3 * k + 2] = nb.length;
        }
        out[3 * MAX_NEIGHBORS] = self.goal.x;
        out[3 * MAX_NEIGHBORS + 1] = self.goal.y;
    }

    pub fn features(&self) -> [f64; OBS_DIM] {
        let mut out = [0.0; OBS_DIM];
        self.write_features(&mut out);
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    pub poses: Vec<Pose>,
    pub goal: Point2,
    pub spec: Arc<FormationSpec>,
    pub step_index: usize,
    pub status: DoneReason,
}

impl EnvState {
    pub fn positions(&self) -> Vec<Point2> {
        self.poses.iter().map(Pose::position).collect()
    }

    pub fn centroid(&self) -> Point2 {
        centroid(&self.positions())
    }

    pub fn n_agents(&self) -> usize {
        self.poses.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub next_state: EnvState,
    pub reward: f64,
    pub done: bool,
    pub done_reason: DoneReason,
    pub observations: Vec<Observation>,
}

/// Start a new episode: random centroid and goal inside the arena (inset by
/// the formation radius), agents placed in formation with random headings.
pub fn reset<R: Rng + ?Sized>(
    spec: Arc<FormationSpec>,
    config: &EnvConfig,
    rng: &mut R,
) -> Result<(EnvState, Vec<Observation>)> {
    let radius = spec.radius();
    let side = config.arena_side;
    if radius > side / 2.0 {
        return Err(Error::ArenaTooSmall { radius, side });
    }
    let lo = radius;
    let hi = side - radius;
    let sample = |rng: &mut R| {
        if hi > lo {
            Point2::new(rng.random_range(lo..hi), rng.random_range(lo..hi))
        } else {
            Point2::new(lo, lo)
        }
    };
    let center = sample(rng);
    let inside = |p: &Point2| p.x >= lo && p.x <= hi && p.y >= lo && p.y <= hi;
    let eps_goal = config.thresholds.eps_goal;
    let goal = loop {
        let candidate = match config.goal_radius {
            Some(r) => {
                let dist = r * rng.random::<f64>().sqrt();
                let angle = rng.random_range(-PI..PI);
                center.add(&Point2::new(dist * angle.cos(), dist * angle.sin()))
            }
            None => sample(rng),
        };
        if inside(&candidate) && candidate.distance(&center) > eps_goal {
            break candidate;
        }
    };
    let orientation = rng.random_range(-PI..PI);
    let poses = place_formation(center, &spec, orientation, rng);
    let state = EnvState {
        poses,
        goal,
        spec,
        step_index: 0,
        status: DoneReason::Running,
    };
    let obs = observe_all(&state);
    Ok((state, obs))
}

/// Explicit Euler step of the unicycle kinematics, then heading wrap and
/// clamping to the `[0, arena_side]²` square.
pub fn integrate_unicycle(p: &Pose, a: &AgentAction, dt: f64, arena_side: f64) -> Pose {
    let (s, c) = p.theta().sin_cos();
    let x = (p.x + a.v * c * dt).clamp(0.0, arena_side);
    let y = (p.y + a.v * s * dt).clamp(0.0, arena_side);
    Pose::new(x, y, p.theta() + a.w * dt)
}

/// Local observation of `agent`: its out-neighbors and the goal.
pub fn observe(state: &EnvState, agent: usize) -> Observation {
    let me = &state.poses[agent];
    let mut obs = Observation {
        goal: to_local(me, &state.goal),
        ..Default::default()
    };
    for (slot, edge) in state.spec.out_edges(agent).take(MAX_NEIGHBORS).enumerate() {
        obs.neighbors[slot] = Neighbor {
            rel: to_local(me, &state.poses[edge.to].position()),
            length: edge.length,
        };
    }
    obs
}

pub fn observe_all(state: &EnvState) -> Vec<Observation> {
    (0..state.n_agents()).map(|i| observe(state, i)).collect()
}

/// Reward and outcome for agents at `positions` chasing `goal`, after
/// `step_index` steps. Precedence: collision, success, formation, penalty;
/// a running episode at the step limit becomes a timeout.
pub fn reward_for(
    positions: &[Point2],
    goal: &Point2,
    spec: &FormationSpec,
    step_index: usize,
    config: &EnvConfig,
) -> (f64, DoneReason) {
    let th = &config.thresholds;
    let r = &config.rewards;
    let (reward, reason) = if collision_condition(positions, th) {
        (r.collision, DoneReason::Collision)
    } else if success_condition(positions, goal, spec, th) {
        (r.goal, DoneReason::Success)
    } else if formation_condition(positions, spec, th) {
        (r.edge, DoneReason::Running)
    } else {
        (r.penalty, DoneReason::Running)
    };
    if reason == DoneReason::Running && step_index >= config.max_steps {
        (reward, DoneReason::Timeout)
    } else {
        (reward, reason)
    }
}

pub fn compute_reward(next_state: &EnvState, config: &EnvConfig) -> (f64, DoneReason) {
    reward_for(
        &next_state.positions(),
        &next_state.goal,
        &next_state.spec,
        next_state.step_index,
        config,
    )
}

/// Advance every agent simultaneously from the same prior state.
pub fn step(state: &EnvState, joint_action: &[AgentAction], config: &EnvConfig) -> Result<StepResult> {
    if state.status.is_done() {
        return Err(Error::EpisodeFinished);
    }
    if joint_action.len() != state.n_agents() {
        return Err(Error::ActionCountMismatch {
            expected: state.n_agents(),
            got: joint_action.len(),
        });
    }
    let poses = state
        .poses
        .iter()
        .zip(joint_action)
        .map(|(p, a)| {
            let a = a.clamped(config.v_max, config.w_max);
            integrate_unicycle(p, &a, config.dt, config.arena_side)
        })
        .collect();
    let mut next_state = EnvState {
        poses,
        goal: state.goal,
        spec: Arc::clone(&state.spec),
        step_index: state.step_index + 1,
        status: DoneReason::Running,
    };
    let (reward, done_reason) = compute_reward(&next_state, config);
    next_state.status = done_reason;
    let observations = observe_all(&next_state);
    Ok(StepResult {
        next_state,
        reward,
        done: done_reason.is_done(),
        done_reason,
        observations,
    })
}

/// Critic input: `[x−cx, y−cy, cos θ, sin θ]` per agent, then `goal − centroid`.
pub fn true_state_vector(state: &EnvState) -> Vec<f64> {
    let c = state.centroid();
    let mut out = Vec::with_capacity(state_dim(state.n_agents()));
    for p in &state.poses {
        out.extend_from_slice(&[p.x - c.x, p.y - c.y, p.theta().cos(), p.theta().sin()]);
    }
    out.push(state.goal.x - c.x);
    out.push(state.goal.y - c.y);
    out
}

/// Rebuild centroid-frame poses and goal from a true-state vector. Headings
/// are recovered up to floating-point rounding.
pub fn decode_state_vector(state: &[f64]) -> (Vec<Pose>, Point2) {
    let n = (state.len() - 2) / 4;
    let poses = (0..n)
        .map(|i| {
            let s = &state[4 * i..4 * i + 4];
            Pose::new(s[0], s[1], normalize_angle(s[3].atan2(s[2])))
        })
        .collect();
    (poses, Point2::new(state[4 * n], state[4 * n + 1]))
}
