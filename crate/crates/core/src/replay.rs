//! Centralized replay of joint transitions, sampled as windows of consecutive
//! steps from one episode, plus hindsight goal relabeling of those windows.

use std::collections::VecDeque;
use std::sync::Arc;

use rand::Rng;

use crate::env::{
    decode_state_vector, reward_for, true_state_vector, AgentAction, DoneReason, EnvConfig,
    EnvState, Observation, StepResult,
};
use crate::error::{Error, Result};
use crate::formation::FormationSpec;
use crate::se2::{relative_transform, Point2, Pose, Transform};

/// One joint environment step.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub episode_id: u64,
    /// Step index of the state the actions were taken in (0-based).
    pub step_index: usize,
    pub state: Vec<f64>,
    pub next_state: Vec<f64>,
    pub reward: f64,
    pub done: bool,
    pub done_reason: DoneReason,
    pub actions: Vec<AgentAction>,
    pub observations: Vec<Observation>,
    pub next_observations: Vec<Observation>,
    /// Per agent: maps coordinates in the agent's next frame to its current frame.
    pub transforms: Vec<Transform>,
    pub spec: Arc<FormationSpec>,
}

impl Transition {
    pub fn from_step(
        episode_id: u64,
        prev: &EnvState,
        prev_obs: &[Observation],
        actions: &[AgentAction],
        result: &StepResult,
    ) -> Self {
        let transforms = prev
            .poses
            .iter()
            .zip(&result.next_state.poses)
            .map(|(before, after)| relative_transform(after, before))
            .collect();
        Self {
            episode_id,
            step_index: prev.step_index,
            state: true_state_vector(prev),
            next_state: true_state_vector(&result.next_state),
            reward: result.reward,
            done: result.done,
            done_reason: result.done_reason,
            actions: actions.to_vec(),
            observations: prev_obs.to_vec(),
            next_observations: result.observations.clone(),
            transforms,
            spec: Arc::clone(&prev.spec),
        }
    }

    pub fn n_agents(&self) -> usize {
        self.actions.len()
    }
}

/// `H` consecutive transitions of one episode, oldest first.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceSample {
    pub transitions: Vec<Transition>,
}

impl SequenceSample {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn last(&self) -> &Transition {
        self.transitions.last().expect("non-empty sequence")
    }

    /// Same episode, consecutive steps, and only the last step may be done.
    pub fn is_well_formed(&self) -> bool {
        let Some(first) = self.transitions.first() else {
            return false;
        };
        self.transitions.iter().enumerate().all(|(k, t)| {
            t.episode_id == first.episode_id
                && t.step_index == first.step_index + k
                && (!t.done || k + 1 == self.transitions.len())
        })
    }
}

/// Transitions in arrival order. Episodes are stored contiguously, so a
/// window is valid exactly when its first and last entries belong to the same
/// episode and are `h - 1` steps apart.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    transitions: VecDeque<Transition>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            transitions: VecDeque::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Append a transition. Over capacity, the oldest transitions are dropped
    /// first; what remains of each episode stays contiguous.
    pub fn push(&mut self, t: Transition) {
        self.transitions.push_back(t);
        while self.transitions.len() > self.capacity {
            self.transitions.pop_front();
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.transitions.iter()
    }

    pub fn episode_count(&self) -> usize {
        self.episode_lengths().len()
    }

    fn episode_lengths(&self) -> Vec<usize> {
        let mut lens: Vec<usize> = Vec::new();
        let mut prev: Option<&Transition> = None;
        for t in &self.transitions {
            match prev {
                Some(p) if p.episode_id == t.episode_id && p.step_index + 1 == t.step_index => {
                    *lens.last_mut().unwrap() += 1
                }
                _ => lens.push(1),
            }
            prev = Some(t);
        }
        lens
    }

    fn window_starts_at(&self, start: usize, h: usize) -> bool {
        let Some(end) = self.transitions.get(start + h - 1) else {
            return false;
        };
        let first = &self.transitions[start];
        first.episode_id == end.episode_id && first.step_index + h - 1 == end.step_index
    }

    /// Number of distinct length-`h` windows that stay inside one episode.
    pub fn window_count(&self, h: usize) -> usize {
        self.episode_lengths().iter().map(|&l| windows_in(l, h)).sum()
    }

    /// Draw `batch` windows uniformly (with replacement) among all windows of
    /// `h` consecutive transitions that do not cross an episode boundary.
    ///
    /// Start positions are drawn uniformly over stored transitions and
    /// rejected when the window would leave its episode.
    pub fn sample_sequences<R: Rng + ?Sized>(
        &self,
        batch: usize,
        h: usize,
        rng: &mut R,
    ) -> Result<Vec<SequenceSample>> {
        let insufficient = Error::InsufficientData { needed: h.max(1) };
        if h == 0 || self.transitions.len() < h {
            return Err(insufficient);
        }
        let mut out = Vec::with_capacity(batch);
        let mut misses = 0usize;
        while out.len() < batch {
            let start = rng.random_range(0..self.transitions.len());
            if self.window_starts_at(start, h) {
                out.push(SequenceSample {
                    transitions: self.transitions.range(start..start + h).cloned().collect(),
                });
            } else {
                misses += 1;
                if misses == 1024 && self.window_count(h) == 0 {
                    return Err(insufficient);
                }
            }
        }
        Ok(out)
    }
}

fn windows_in(len: usize, h: usize) -> usize {
    if h == 0 || len < h {
        0
    } else {
        len - h + 1
    }
}

/// Achieved centroid seen from each agent, using a centroid-relative state vector.
fn centroid_in_agent_frames(state: &[f64], n: usize) -> Vec<Point2> {
    (0..n)
        .map(|i| {
            let (rx, ry, c, s) = (state[4 * i], state[4 * i + 1], state[4 * i + 2], state[4 * i + 3]);
            // R(θ)ᵀ · (0 − rel_i)
            Point2::new(-(c * rx + s * ry), s * rx - c * ry)
        })
        .collect()
}

/// World-aligned `goal − centroid`, reconstructed from each agent's local goal
/// and averaged over agents.
fn goal_offset_from_local(state: &[f64], local_goals: impl Iterator<Item = Point2>) -> Point2 {
    let mut sum = Point2::ZERO;
    let mut n = 0.0;
    for (i, g) in local_goals.enumerate() {
        let (rx, ry, c, s) = (state[4 * i], state[4 * i + 1], state[4 * i + 2], state[4 * i + 3]);
        sum = sum.add(&Point2::new(rx + c * g.x - s * g.y, ry + s * g.x + c * g.y));
        n += 1.0;
    }
    sum.scale(1.0 / n)
}

fn set_goal_offset(state: &mut [f64], offset: Point2) {
    let k = state.len();
    state[k - 2] = offset.x;
    state[k - 1] = offset.y;
}

/// Hindsight relabeling of a window: the goal becomes the formation centroid
/// reached after the final step. Each agent's local view of it is carried
/// backward through the stored frame changes, `g_t = K_t^{t+1} · g_{t+1}`.
/// Goals, rewards and done flags are rewritten; everything else is copied.
pub fn her_relabel(sample: &SequenceSample, config: &EnvConfig) -> SequenceSample {
    let mut out = sample.clone();
    let h = out.transitions.len();
    if h == 0 {
        return out;
    }
    let n = out.transitions[0].n_agents();
    let mut goals = centroid_in_agent_frames(&out.transitions[h - 1].next_state, n);
    for t in out.transitions.iter_mut().rev() {
        for (obs, g) in t.next_observations.iter_mut().zip(&goals) {
            obs.goal = *g;
        }
        let next_offset = goal_offset_from_local(&t.next_state, goals.iter().copied());
        set_goal_offset(&mut t.next_state, next_offset);

        for (g, k) in goals.iter_mut().zip(&t.transforms) {
            *g = k.apply(g);
        }
        for (obs, g) in t.observations.iter_mut().zip(&goals) {
            obs.goal = *g;
        }
        let offset = goal_offset_from_local(&t.state, goals.iter().copied());
        set_goal_offset(&mut t.state, offset);
    }
    for (k, t) in out.transitions.iter_mut().enumerate() {
        let (poses, goal) = decode_state_vector(&t.next_state);
        let positions: Vec<Point2> = poses.iter().map(Pose::position).collect();
        let (reward, reason) = reward_for(&positions, &goal, &t.spec, t.step_index + 1, config);
        t.reward = reward;
        if k + 1 == h {
            t.done = reason.is_done();
            t.done_reason = reason;
        } else {
            // The recorded episode went on past this step.
            t.done = false;
            t.done_reason = DoneReason::Running;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{observe_all, reset, step};
    use crate::formation::triangle;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dummy(episode_id: u64, step_index: usize) -> Transition {
        let spec = Arc::new(triangle(1.0).unwrap());
        Transition {
            episode_id,
            step_index,
            state: vec![step_index as f64; 14],
            next_state: vec![step_index as f64 + 1.0; 14],
            reward: -0.5,
            done: false,
            done_reason: DoneReason::Running,
            actions: vec![AgentAction::new(0.25, -0.5); 3],
            observations: vec![Observation::default(); 3],
            next_observations: vec![Observation::default(); 3],
            transforms: vec![Transform::IDENTITY; 3],
            spec,
        }
    }

    fn fill(buffer: &mut ReplayBuffer, episode_id: u64, len: usize) {
        for k in 0..len {
            let mut t = dummy(episode_id, k);
            if k + 1 == len {
                t.done = true;
                t.done_reason = DoneReason::Timeout;
            }
            buffer.push(t);
        }
    }

    #[test]
    fn push_and_evict() {
        let mut b = ReplayBuffer::new(2);
        let t = dummy(0, 0);
        b.push(t.clone());
        assert_eq!(b.len(), 1);
        assert_eq!(b.iter().next().unwrap(), &t);
        b.push(dummy(0, 1));
        b.push(dummy(1, 0));
        assert_eq!(b.len(), 2);
        let kept: Vec<(u64, usize)> = b.iter().map(|t| (t.episode_id, t.step_index)).collect();
        assert_eq!(kept, vec![(0, 1), (1, 0)]);
    }

    #[test]
    fn window_edge_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut b = ReplayBuffer::new(100);
        fill(&mut b, 7, 4);
        assert!(matches!(
            b.sample_sequences(1, 5, &mut rng),
            Err(Error::InsufficientData { .. })
        ));
        fill(&mut b, 8, 5);
        assert_eq!(b.window_count(5), 1);
        for s in b.sample_sequences(20, 5, &mut rng).unwrap() {
            assert!(s.is_well_formed());
            assert_eq!(s.transitions[0].episode_id, 8);
            assert_eq!(s.transitions[0].step_index, 0);
        }
    }

    #[test]
    fn episodes_chosen_uniformly() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut b = ReplayBuffer::new(1000);
        fill(&mut b, 0, 30);
        fill(&mut b, 1, 30);
        let draws = b.sample_sequences(10_000, 15, &mut rng).unwrap();
        let first = draws.iter().filter(|s| s.transitions[0].episode_id == 0).count();
        let frac = first as f64 / 10_000.0;
        assert!((frac - 0.5).abs() < 0.03, "fraction {frac}");
    }

    /// Roll a short episode with a seeded random policy and return its transitions.
    fn rollout(seed: u64, steps: usize) -> (Vec<Transition>, Vec<Vec<Pose>>) {
        let cfg = EnvConfig::default();
        let spec = Arc::new(triangle(1.0).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut state, mut obs) = reset(spec, &cfg, &mut rng).unwrap();
        let mut out = Vec::new();
        let mut poses = vec![state.poses.clone()];
        for _ in 0..steps {
            let acts: Vec<AgentAction> = (0..3)
                .map(|_| AgentAction::new(rng.random_range(0.0..0.3), rng.random_range(-1.0..1.0)))
                .collect();
            let r = step(&state, &acts, &cfg).unwrap();
            out.push(Transition::from_step(seed, &state, &obs, &acts, &r));
            poses.push(r.next_state.poses.clone());
            if r.done {
                break;
            }
            obs = r.observations.clone();
            state = r.next_state;
        }
        (out, poses)
    }

    #[test]
    fn relabel_world_consistency() {
        let cfg = EnvConfig::default();
        let (transitions, poses) = rollout(3, 15);
        let h = transitions.len();
        let sample = SequenceSample { transitions };
        let relabeled = her_relabel(&sample, &cfg);
        let final_pts: Vec<Point2> = poses[h].iter().map(Pose::position).collect();
        let target = crate::formation::centroid(&final_pts);
        for (k, t) in relabeled.transitions.iter().enumerate() {
            for i in 0..3 {
                let w = crate::se2::to_world(&poses[k][i], &t.observations[i].goal);
                assert!(w.distance(&target) < 1e-9);
                let w = crate::se2::to_world(&poses[k + 1][i], &t.next_observations[i].goal);
                assert!(w.distance(&target) < 1e-9);
            }
        }
        // Untouched parts.
        for (a, b) in sample.transitions.iter().zip(&relabeled.transitions) {
            assert_eq!(a.actions, b.actions);
            assert_eq!(a.transforms, b.transforms);
            assert_eq!(a.state[..12], b.state[..12]);
        }
        // Original sample left as it was.
        assert_ne!(sample.transitions[0].observations, relabeled.transitions[0].observations);
    }

    #[test]
    fn stationary_agents_keep_one_goal() {
        let cfg = EnvConfig::default();
        let spec = Arc::new(triangle(1.0).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (mut state, mut obs) = reset(spec, &cfg, &mut rng).unwrap();
        let mut transitions = Vec::new();
        for _ in 0..5 {
            let acts = [AgentAction::ZERO; 3];
            let r = step(&state, &acts, &cfg).unwrap();
            transitions.push(Transition::from_step(0, &state, &obs, &acts, &r));
            obs = r.observations.clone();
            state = r.next_state;
        }
        let relabeled = her_relabel(&SequenceSample { transitions }, &cfg);
        let first = relabeled.transitions[0].observations.clone();
        for t in &relabeled.transitions {
            for (a, b) in t.observations.iter().zip(&first) {
                assert!(a.goal.distance(&b.goal) < 1e-12);
            }
            assert_eq!(t.reward, 50.0);
        }
        let last = relabeled.last();
        assert!(last.done);
        assert_eq!(last.done_reason, DoneReason::Success);
        assert!(relabeled.is_well_formed());
    }

    #[test]
    fn relabel_is_idempotent_on_reached_goal() {
        let cfg = EnvConfig::default();
        let (transitions, _) = rollout(9, 10);
        let once = her_relabel(&SequenceSample { transitions }, &cfg);
        let twice = her_relabel(&once, &cfg);
        for (a, b) in once.transitions.iter().zip(&twice.transitions) {
            assert_eq!(a.reward, b.reward);
            assert_eq!(a.done, b.done);
            for (x, y) in a.state.iter().zip(&b.state).chain(a.next_state.iter().zip(&b.next_state)) {
                assert!((x - y).abs() < 1e-9);
            }
            for (o, p) in a.observations.iter().zip(&b.observations) {
                assert!(o.goal.distance(&p.goal) < 1e-9);
            }
        }
    }

    #[test]
    fn observations_match_env_after_relabel() {
        // Rebuilding the environment with the relabeled goal reproduces the observations.
        let cfg = EnvConfig::default();
        let spec = Arc::new(triangle(1.0).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let (state, obs) = reset(Arc::clone(&spec), &cfg, &mut rng).unwrap();
        let acts = [AgentAction::new(0.2, 0.1), AgentAction::new(0.1, -0.3), AgentAction::new(0.0, 0.5)];
        let r = step(&state, &acts, &cfg).unwrap();
        let t = Transition::from_step(0, &state, &obs, &acts, &r);
        let relabeled = her_relabel(&SequenceSample { transitions: vec![t] }, &cfg);
        let mut moved = state.clone();
        moved.goal = r.next_state.centroid();
        let expected = observe_all(&moved);
        for (a, b) in relabeled.transitions[0].observations.iter().zip(&expected) {
            assert!(a.goal.distance(&b.goal) < 1e-9);
            assert_eq!(a.neighbors, b.neighbors);
        }
        let expected_state = true_state_vector(&moved);
        for (a, b) in relabeled.transitions[0].state.iter().zip(&expected_state) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}
