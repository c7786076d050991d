//! Scripted proportional controller with full state access, used as a
//! reference for what the environment allows.

use crate::env::{AgentAction, EnvConfig, EnvState};
use crate::se2::{normalize_angle, Point2};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaselineGains {
    /// Forward speed per metre of distance to the slot.
    pub k_v: f64,
    /// Turn rate per radian of bearing error.
    pub k_w: f64,
    /// Stop once this close to the slot.
    pub arrive_radius: f64,
}

impl Default for BaselineGains {
    fn default() -> Self {
        Self {
            k_v: 3.0,
            k_w: 5.0,
            arrive_radius: 0.02,
        }
    }
}

/// Target position of every agent: the reference formation centered on the
/// goal, rotated to best match the current layout (least squares).
pub fn goal_slots(state: &EnvState) -> Vec<Point2> {
    let reference = state.spec.reference_positions();
    let c = state.centroid();
    let (mut dot, mut cross) = (0.0, 0.0);
    for (r, p) in reference.iter().zip(state.poses.iter()) {
        let q = p.position().sub(&c);
        dot += r.x * q.x + r.y * q.y;
        cross += r.x * q.y - r.y * q.x;
    }
    let angle = if dot == 0.0 && cross == 0.0 { 0.0 } else { cross.atan2(dot) };
    reference.iter().map(|r| state.goal.add(&r.rotate(angle))).collect()
}

/// Drive each agent toward its slot: turn toward the slot, move forward only
/// while roughly facing it.
pub fn baseline_actions(state: &EnvState, config: &EnvConfig, gains: &BaselineGains) -> Vec<AgentAction> {
    goal_slots(state)
        .iter()
        .zip(state.poses.iter())
        .map(|(slot, pose)| {
            let d = slot.sub(&pose.position());
            let dist = d.norm();
            if dist < gains.arrive_radius {
                return AgentAction::ZERO;
            }
            let err = normalize_angle(d.y.atan2(d.x) - pose.theta());
            let v = (gains.k_v * dist).min(config.v_max) * err.cos().max(0.0);
            let w = gains.k_w * err;
            AgentAction::new(v, w).clamped(config.v_max, config.w_max)
        })
        .collect()
}
