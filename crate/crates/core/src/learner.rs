//! Centralized critic over the joint state-action history, decentralized
//! deterministic actors over each agent's own observation history.
//!
//! Inputs are flattened histories, oldest step first:
//! - actor: `H × OBS_DIM` local observation features;
//! - critic: `H × (state_dim + 2n)`, each step being the centroid-relative
//!   true state followed by every agent's normalized action.
//!
//! Normalized actions live in `[-1, 1]²`: `v = v_max (a₀ + 1) / 2`, `w = w_max a₁`.

use ndarray::{s, Array2};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::env::{state_dim, AgentAction, Observation, ACTION_DIM, OBS_DIM};
use crate::error::{Error, Result};
use crate::nn::{adam_step, init_mlp, polyak_update, Activation, AdamState, GradientBundle, MlpParams};
use crate::replay::SequenceSample;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerConfig {
    pub n_agents: usize,
    pub history: usize,
    pub gamma: f64,
    pub tau: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub actor_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    /// One actor shared by every agent.
    pub share_actor: bool,
    pub v_max: f64,
    pub w_max: f64,
    /// Clamp TD targets to this `[low, high]` range of achievable returns.
    pub value_bounds: Option<[f64; 2]>,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            n_agents: 3,
            history: 15,
            gamma: 0.99,
            tau: 5e-3,
            actor_lr: 1e-4,
            critic_lr: 1e-3,
            actor_hidden: vec![128, 128],
            critic_hidden: vec![256, 256],
            share_actor: true,
            v_max: 1.0,
            w_max: std::f64::consts::PI,
            value_bounds: None,
        }
    }
}

impl LearnerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::InvalidConfig(format!("gamma {} outside [0, 1]", self.gamma)));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::InvalidConfig(format!("tau {} outside [0, 1]", self.tau)));
        }
        if let Some([lo, hi]) = self.value_bounds {
            if lo.is_nan() || hi.is_nan() || lo > hi {
                return Err(Error::InvalidConfig(format!("value bounds [{lo}, {hi}] are empty")));
            }
        }
        if self.history == 0 || self.n_agents < 2 {
            return Err(Error::InvalidConfig("history must be >= 1 and n_agents >= 2".into()));
        }
        Ok(())
    }

    pub fn actor_input_dim(&self) -> usize {
        OBS_DIM * self.history
    }

    pub fn critic_step_dim(&self) -> usize {
        state_dim(self.n_agents) + ACTION_DIM * self.n_agents
    }

    pub fn critic_input_dim(&self) -> usize {
        self.critic_step_dim() * self.history
    }

    pub fn actor_layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.actor_input_dim()];
        sizes.extend(&self.actor_hidden);
        sizes.push(ACTION_DIM);
        sizes
    }

    pub fn critic_layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.critic_input_dim()];
        sizes.extend(&self.critic_hidden);
        sizes.push(1);
        sizes
    }

    pub fn actor_count(&self) -> usize {
        if self.share_actor {
            1
        } else {
            self.n_agents
        }
    }

    pub fn action_from_normalized(&self, a: &[f64]) -> AgentAction {
        AgentAction::new(self.v_max * (a[0] + 1.0) / 2.0, self.w_max * a[1])
    }

    pub fn normalize_action(&self, a: &AgentAction) -> [f64; 2] {
        [2.0 * a.v / self.v_max - 1.0, a.w / self.w_max]
    }
}

/// Last `h` observations, left-padded by repeating the oldest one.
pub fn pad_history(history: &[Observation], h: usize) -> Vec<Observation> {
    assert!(!history.is_empty(), "observation history is empty");
    let tail = &history[history.len().saturating_sub(h)..];
    let mut out = Vec::with_capacity(h);
    out.extend(std::iter::repeat_n(tail[0], h - tail.len()));
    out.extend_from_slice(tail);
    out
}

fn write_obs_history<'a>(row: &mut [f64], history: impl Iterator<Item = &'a Observation>) {
    for (k, obs) in history.enumerate() {
        obs.write_features(&mut row[k * OBS_DIM..(k + 1) * OBS_DIM]);
    }
}

/// Deterministic action of `actor` for one observation history, plus Gaussian
/// exploration noise with standard deviation `noise_scale × range` per
/// component, clamped to the action bounds.
pub fn act<R: Rng + ?Sized>(
    actor: &MlpParams,
    config: &LearnerConfig,
    obs_history: &[Observation],
    noise_scale: f64,
    rng: &mut R,
) -> Result<AgentAction> {
    let padded = pad_history(obs_history, config.history);
    let mut input = vec![0.0; config.actor_input_dim()];
    write_obs_history(&mut input, padded.iter());
    let (out, _) = crate::nn::forward(actor, &input)?;
    let mut action = config.action_from_normalized(&out);
    if noise_scale > 0.0 {
        let unit = Normal::new(0.0, 1.0).expect("unit normal");
        action.v += noise_scale * config.v_max * unit.sample(rng);
        action.w += noise_scale * 2.0 * config.w_max * unit.sample(rng);
    }
    Ok(action.clamped(config.v_max, config.w_max))
}

#[derive(Debug, Clone)]
pub struct Learner {
    pub config: LearnerConfig,
    actors: Vec<MlpParams>,
    target_actors: Vec<MlpParams>,
    actor_opts: Vec<AdamState>,
    critic: MlpParams,
    target_critic: MlpParams,
    critic_opt: AdamState,
    train_steps: u64,
}

/// Diagnostics of one training step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainStats {
    pub critic_loss: f64,
    pub actor_objective: f64,
}

impl Learner {
    pub fn new<R: Rng + ?Sized>(config: LearnerConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let actor_sizes = config.actor_layer_sizes();
        let mut actor_acts = vec![Activation::Tanh; actor_sizes.len() - 1];
        *actor_acts.last_mut().unwrap() = Activation::Tanh;
        let critic_sizes = config.critic_layer_sizes();
        let mut critic_acts = vec![Activation::Relu; critic_sizes.len() - 1];
        *critic_acts.last_mut().unwrap() = Activation::Linear;

        let actors = (0..config.actor_count())
            .map(|_| init_mlp(&actor_sizes, &actor_acts, rng))
            .collect::<Result<Vec<_>>>()?;
        let critic = init_mlp(&critic_sizes, &critic_acts, rng)?;
        Self::from_params(config, actors, critic)
    }

    /// Assemble a learner around existing networks; targets start as copies.
    pub fn from_params(config: LearnerConfig, actors: Vec<MlpParams>, critic: MlpParams) -> Result<Self> {
        config.validate()?;
        if actors.len() != config.actor_count() {
            return Err(Error::BadArchitecture(format!(
                "expected {} actor networks, got {}",
                config.actor_count(),
                actors.len()
            )));
        }
        for a in &actors {
            if a.layer_sizes() != config.actor_layer_sizes() {
                return Err(Error::BadArchitecture(format!(
                    "actor sizes {:?}, expected {:?}",
                    a.layer_sizes(),
                    config.actor_layer_sizes()
                )));
            }
        }
        if critic.layer_sizes() != config.critic_layer_sizes() {
            return Err(Error::BadArchitecture(format!(
                "critic sizes {:?}, expected {:?}",
                critic.layer_sizes(),
                config.critic_layer_sizes()
            )));
        }
        Ok(Self {
            actor_opts: actors.iter().map(AdamState::new).collect(),
            target_actors: actors.clone(),
            critic_opt: AdamState::new(&critic),
            target_critic: critic.clone(),
            actors,
            critic,
            config,
            train_steps: 0,
        })
    }

    /// Replace the target networks, e.g. when resuming from a checkpoint.
    pub fn set_targets(&mut self, target_actors: Vec<MlpParams>, target_critic: MlpParams) -> Result<()> {
        if target_actors.len() != self.actors.len()
            || target_actors.iter().zip(&self.actors).any(|(t, a)| !t.same_architecture(a))
            || !target_critic.same_architecture(&self.critic)
        {
            return Err(Error::BadArchitecture("target networks do not match online networks".into()));
        }
        self.target_actors = target_actors;
        self.target_critic = target_critic;
        Ok(())
    }

    fn actor_index(&self, agent: usize) -> usize {
        if self.config.share_actor {
            0
        } else {
            agent
        }
    }

    pub fn actor_for(&self, agent: usize) -> &MlpParams {
        &self.actors[self.actor_index(agent)]
    }

    pub fn actors(&self) -> &[MlpParams] {
        &self.actors
    }

    pub fn actor_mut(&mut self, k: usize) -> &mut MlpParams {
        &mut self.actors[k]
    }

    pub fn target_actors(&self) -> &[MlpParams] {
        &self.target_actors
    }

    pub fn critic(&self) -> &MlpParams {
        &self.critic
    }

    pub fn critic_mut(&mut self) -> &mut MlpParams {
        &mut self.critic
    }

    pub fn target_critic(&self) -> &MlpParams {
        &self.target_critic
    }

    pub fn target_critic_mut(&mut self) -> &mut MlpParams {
        &mut self.target_critic
    }

    pub fn train_steps(&self) -> u64 {
        self.train_steps
    }

    pub fn set_train_steps(&mut self, steps: u64) {
        self.train_steps = steps;
    }

    pub fn act<R: Rng + ?Sized>(
        &self,
        agent: usize,
        obs_history: &[Observation],
        noise_scale: f64,
        rng: &mut R,
    ) -> Result<AgentAction> {
        act(self.actor_for(agent), &self.config, obs_history, noise_scale, rng)
    }

    fn check_batch(&self, batch: &[SequenceSample]) -> Result<()> {
        if batch.is_empty() {
            return Err(Error::ShapeMismatch("empty batch".into()));
        }
        for s in batch {
            if s.len() != self.config.history {
                return Err(Error::ShapeMismatch(format!(
                    "sequence of length {} for history {}",
                    s.len(),
                    self.config.history
                )));
            }
            if s.transitions.iter().any(|t| t.n_agents() != self.config.n_agents) {
                return Err(Error::ShapeMismatch("agent count".into()));
            }
        }
        Ok(())
    }

    /// Actor inputs of `agent` for every sample, from current or next observations.
    fn actor_inputs(&self, batch: &[SequenceSample], agent: usize, next: bool) -> Array2<f64> {
        let mut x = Array2::zeros((batch.len(), self.config.actor_input_dim()));
        for (mut row, sample) in x.rows_mut().into_iter().zip(batch) {
            let row = row.as_slice_mut().expect("standard layout");
            let history = sample.transitions.iter().map(|t| {
                if next {
                    &t.next_observations[agent]
                } else {
                    &t.observations[agent]
                }
            });
            write_obs_history(row, history);
        }
        x
    }

    /// Critic inputs built from stored states and actions.
    fn critic_inputs(&self, batch: &[SequenceSample]) -> Array2<f64> {
        let step = self.config.critic_step_dim();
        let sd = state_dim(self.config.n_agents);
        let mut x = Array2::zeros((batch.len(), self.config.critic_input_dim()));
        for (mut row, sample) in x.rows_mut().into_iter().zip(batch) {
            let row = row.as_slice_mut().expect("standard layout");
            for (k, t) in sample.transitions.iter().enumerate() {
                let chunk = &mut row[k * step..(k + 1) * step];
                chunk[..sd].copy_from_slice(&t.state);
                for (i, a) in t.actions.iter().enumerate() {
                    let na = self.config.normalize_action(a);
                    chunk[sd + 2 * i..sd + 2 * i + 2].copy_from_slice(&na);
                }
            }
        }
        x
    }

    /// Offset of agent `agent`'s action in the final history step of a critic input.
    fn last_action_offset(&self, agent: usize) -> usize {
        let step = self.config.critic_step_dim();
        (self.config.history - 1) * step + state_dim(self.config.n_agents) + ACTION_DIM * agent
    }

    /// Normalized actions of every agent's target actor on next-observation histories.
    fn target_next_actions(&self, batch: &[SequenceSample]) -> Result<Vec<Array2<f64>>> {
        (0..self.config.n_agents)
            .map(|i| {
                let x = self.actor_inputs(batch, i, true);
                let net = &self.target_actors[self.actor_index(i)];
                Ok(net.forward_batch(x.view())?.output().clone())
            })
            .collect()
    }

    /// TD targets `r + γ Q̄(s′, ū′)` with `ū′` from the target actors for the
    /// newest step (earlier steps of the next history reuse stored actions).
    /// Collision and success drop the bootstrap; timeouts keep it.
    pub fn critic_targets(&self, batch: &[SequenceSample]) -> Result<Vec<f64>> {
        self.check_batch(batch)?;
        let h = self.config.history;
        let n = self.config.n_agents;
        let step = self.config.critic_step_dim();
        let sd = state_dim(n);
        let next_actions = self.target_next_actions(batch)?;
        let mut x = Array2::zeros((batch.len(), self.config.critic_input_dim()));
        for (b, (mut row, sample)) in x.rows_mut().into_iter().zip(batch).enumerate() {
            let row = row.as_slice_mut().expect("standard layout");
            for k in 0..h {
                let t = &sample.transitions[k];
                let chunk = &mut row[k * step..(k + 1) * step];
                chunk[..sd].copy_from_slice(&t.next_state);
                for i in 0..n {
                    let na = if k + 1 < h {
                        self.config.normalize_action(&sample.transitions[k + 1].actions[i])
                    } else {
                        [next_actions[i][[b, 0]], next_actions[i][[b, 1]]]
                    };
                    chunk[sd + 2 * i..sd + 2 * i + 2].copy_from_slice(&na);
                }
            }
        }
        let q_next = self.target_critic.forward_batch(x.view())?;
        let q_next = q_next.output();
        Ok(batch
            .iter()
            .enumerate()
            .map(|(b, sample)| {
                let last = sample.last();
                let y = if last.done && last.done_reason.is_terminal() {
                    last.reward
                } else {
                    last.reward + self.config.gamma * q_next[[b, 0]]
                };
                match self.config.value_bounds {
                    Some([lo, hi]) => y.clamp(lo, hi),
                    None => y,
                }
            })
            .collect())
    }

    pub fn critic_target(&self, sample: &SequenceSample) -> Result<f64> {
        Ok(self.critic_targets(std::slice::from_ref(sample))?[0])
    }

    /// Mean squared TD error and its critic gradient for fixed targets.
    pub fn critic_loss_and_grads(
        &self,
        batch: &[SequenceSample],
        targets: &[f64],
    ) -> Result<(f64, GradientBundle)> {
        self.check_batch(batch)?;
        let x = self.critic_inputs(batch);
        let cache = self.critic.forward_batch(x.view())?;
        let q = cache.output();
        let m = batch.len() as f64;
        let mut upstream = Array2::zeros((batch.len(), 1));
        let mut loss = 0.0;
        for (b, y) in targets.iter().enumerate() {
            let err = q[[b, 0]] - y;
            loss += err * err / m;
            upstream[[b, 0]] = 2.0 * err / m;
        }
        let grads = self.critic.param_gradients(&cache, upstream.view())?;
        Ok((loss, grads))
    }

    /// One Adam step on the critic regression. Returns the pre-step loss.
    pub fn update_critic(&mut self, batch: &[SequenceSample]) -> Result<f64> {
        let targets = self.critic_targets(batch)?;
        let (loss, grads) = self.critic_loss_and_grads(batch, &targets)?;
        adam_step(&mut self.critic, &grads, &mut self.critic_opt, self.config.critic_lr)?;
        Ok(loss)
    }

    /// Mean critic value with `agent`'s newest action replaced by its online
    /// actor's output, and the gradient of that mean with respect to the
    /// agent's actor parameters.
    pub fn actor_objective_and_grads(
        &self,
        batch: &[SequenceSample],
        agent: usize,
    ) -> Result<(f64, GradientBundle)> {
        self.check_batch(batch)?;
        let actor = self.actor_for(agent);
        let xa = self.actor_inputs(batch, agent, false);
        let actor_cache = actor.forward_batch(xa.view())?;
        let actions = actor_cache.output();
        let mut xc = self.critic_inputs(batch);
        let off = self.last_action_offset(agent);
        xc.slice_mut(s![.., off..off + ACTION_DIM]).assign(actions);
        let critic_cache = self.critic.forward_batch(xc.view())?;
        let m = batch.len() as f64;
        let objective = critic_cache.output().sum() / m;
        let upstream = Array2::from_elem((batch.len(), 1), 1.0 / m);
        let d_input = self.critic.input_gradient(&critic_cache, upstream.view())?;
        let d_action = d_input.slice(s![.., off..off + ACTION_DIM]);
        let grads = actor.param_gradients(&actor_cache, d_action)?;
        Ok((objective, grads))
    }

    /// Deterministic policy-gradient ascent for every actor. With a shared
    /// actor the per-agent gradients are summed. Returns the mean objective.
    pub fn update_actors(&mut self, batch: &[SequenceSample]) -> Result<f64> {
        let mut grads: Vec<GradientBundle> = self.actors.iter().map(GradientBundle::zeros_like).collect();
        let mut total = 0.0;
        for agent in 0..self.config.n_agents {
            let (obj, g) = self.actor_objective_and_grads(batch, agent)?;
            total += obj;
            grads[self.actor_index(agent)].add_params(&g);
        }
        for ((actor, opt), g) in self.actors.iter_mut().zip(&mut self.actor_opts).zip(&mut grads) {
            // Adam descends; flip the sign to ascend the critic.
            g.scale_params(-1.0);
            adam_step(actor, g, opt, self.config.actor_lr)?;
        }
        Ok(total / self.config.n_agents as f64)
    }

    pub fn soft_update_targets(&mut self) -> Result<()> {
        let tau = self.config.tau;
        polyak_update(&mut self.target_critic, &self.critic, tau)?;
        for (target, online) in self.target_actors.iter_mut().zip(&self.actors) {
            polyak_update(target, online, tau)?;
        }
        Ok(())
    }

    /// Critic step, actor step, then target soft update.
    pub fn train_step(&mut self, batch: &[SequenceSample]) -> Result<TrainStats> {
        let critic_loss = self.update_critic(batch)?;
        let actor_objective = self.update_actors(batch)?;
        self.soft_update_targets()?;
        self.train_steps += 1;
        Ok(TrainStats {
            critic_loss,
            actor_objective,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{DoneReason, Neighbor};
    use crate::formation::triangle;
    use crate::nn::Layer;
    use crate::replay::Transition;
    use crate::se2::{Point2, Transform};
    use ndarray::Array1;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn small_config() -> LearnerConfig {
        LearnerConfig {
            history: 3,
            actor_hidden: vec![6],
            critic_hidden: vec![8],
            ..Default::default()
        }
    }

    fn obs(seed: f64) -> Observation {
        Observation {
            neighbors: [
                Neighbor {
                    rel: Point2::new(seed.sin(), seed.cos()),
                    length: 1.0,
                },
                Neighbor {
                    rel: Point2::new(0.3 * seed, -0.2),
                    length: 1.0,
                },
            ],
            goal: Point2::new(1.0 + seed, -seed),
        }
    }

    fn sample(rng: &mut ChaCha8Rng, h: usize, reason: DoneReason) -> SequenceSample {
        let spec = Arc::new(triangle(1.0).unwrap());
        let transitions = (0..h)
            .map(|k| {
                let last = k + 1 == h;
                Transition {
                    episode_id: 0,
                    step_index: k,
                    state: (0..14).map(|_| rng.random_range(-1.0..1.0)).collect(),
                    next_state: (0..14).map(|_| rng.random_range(-1.0..1.0)).collect(),
                    reward: if last { 0.1 } else { -0.5 },
                    done: last && reason.is_done(),
                    done_reason: if last { reason } else { DoneReason::Running },
                    actions: (0..3)
                        .map(|_| AgentAction::new(rng.random_range(0.0..1.0), rng.random_range(-3.0..3.0)))
                        .collect(),
                    observations: (0..3).map(|_| obs(rng.random_range(-1.0..1.0))).collect(),
                    next_observations: (0..3).map(|_| obs(rng.random_range(-1.0..1.0))).collect(),
                    transforms: vec![Transform::IDENTITY; 3],
                    spec: Arc::clone(&spec),
                }
            })
            .collect();
        SequenceSample { transitions }
    }

    fn zero_actor(cfg: &LearnerConfig) -> MlpParams {
        let sizes = cfg.actor_layer_sizes();
        let layers = sizes
            .windows(2)
            .map(|d| Layer {
                weights: Array2::zeros((d[1], d[0])),
                bias: Array1::zeros(d[1]),
                activation: Activation::Tanh,
            })
            .collect();
        MlpParams::from_layers(layers).unwrap()
    }

    #[test]
    fn act_is_deterministic_and_bounded() {
        let cfg = small_config();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let learner = Learner::new(cfg.clone(), &mut rng).unwrap();
        let hist = vec![obs(0.1), obs(0.2)];
        let a = learner.act(0, &hist, 0.0, &mut rng).unwrap();
        let b = learner.act(0, &hist, 0.0, &mut rng).unwrap();
        assert_eq!(a, b);
        for _ in 0..500 {
            let a = learner.act(1, &hist, 2.0, &mut rng).unwrap();
            assert!((0.0..=cfg.v_max).contains(&a.v));
            assert!((-cfg.w_max..=cfg.w_max).contains(&a.w));
        }
        // Zero network: tanh(0) = 0 maps to the middle of each range.
        let zero = zero_actor(&cfg);
        let a = act(&zero, &cfg, &hist, 0.0, &mut rng).unwrap();
        assert_eq!(a, AgentAction::new(0.5, 0.0));
    }

    #[test]
    fn history_padding() {
        let h = pad_history(&[obs(1.0), obs(2.0)], 4);
        assert_eq!(h, vec![obs(1.0), obs(1.0), obs(1.0), obs(2.0)]);
        let h = pad_history(&[obs(1.0), obs(2.0), obs(3.0)], 2);
        assert_eq!(h, vec![obs(2.0), obs(3.0)]);
    }

    #[test]
    fn action_normalization_round_trip() {
        let cfg = LearnerConfig::default();
        let a = AgentAction::new(0.3, -1.1);
        let back = cfg.action_from_normalized(&cfg.normalize_action(&a));
        assert!((back.v - a.v).abs() < 1e-15 && (back.w - a.w).abs() < 1e-15);
    }

    #[test]
    fn critic_target_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = small_config();
        let mut learner = Learner::new(cfg.clone(), &mut rng).unwrap();

        let mut success = sample(&mut rng, 3, DoneReason::Success);
        success.transitions[2].reward = 50.0;
        assert_eq!(learner.critic_target(&success).unwrap(), 50.0);

        // Constant target critic: zero weights, bias c in the output layer.
        let c = 7.25;
        let tc = learner.target_critic_mut();
        let mut flat = vec![0.0; tc.param_count()];
        *flat.last_mut().unwrap() = c;
        tc.set_flat(&flat).unwrap();
        let running = sample(&mut rng, 3, DoneReason::Running);
        let y = learner.critic_target(&running).unwrap();
        assert!((y - (0.1 + 0.99 * c)).abs() < 1e-12);
        let timeout = sample(&mut rng, 3, DoneReason::Timeout);
        assert!((learner.critic_target(&timeout).unwrap() - (0.1 + 0.99 * c)).abs() < 1e-12);

        let mut clipped = learner.clone();
        clipped.config.value_bounds = Some([-1.0, 5.0]);
        assert_eq!(clipped.critic_target(&running).unwrap(), 5.0);
        assert_eq!(clipped.critic_target(&success).unwrap(), 5.0);

        let mut learner0 = Learner::new(LearnerConfig { gamma: 0.0, ..cfg }, &mut rng).unwrap();
        assert_eq!(learner0.critic_target(&running).unwrap(), 0.1);
        assert!(learner0.update_critic(&[running]).unwrap().is_finite());
    }

    #[test]
    fn critic_regression_decreases_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cfg = LearnerConfig {
            gamma: 0.0,
            critic_lr: 1e-3,
            ..small_config()
        };
        let mut learner = Learner::new(cfg, &mut rng).unwrap();
        let batch: Vec<SequenceSample> = (0..16)
            .map(|_| sample(&mut rng, 3, DoneReason::Running))
            .collect();
        let first = learner.update_critic(&batch).unwrap();
        let mut last = first;
        for _ in 0..100 {
            last = learner.update_critic(&batch).unwrap();
        }
        assert!(last < first * 0.5, "{first} -> {last}");
    }

    #[test]
    fn critic_at_target_has_zero_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut learner = Learner::new(small_config(), &mut rng).unwrap();
        let batch = vec![sample(&mut rng, 3, DoneReason::Running)];
        let x = learner.critic_inputs(&batch);
        let q = learner.critic().forward_batch(x.view()).unwrap().output()[[0, 0]];
        let (loss, grads) = learner.critic_loss_and_grads(&batch, &[q]).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grads.flat().iter().all(|g| *g == 0.0));
        let before = learner.critic().clone();
        let mut opt = learner.critic_opt.clone();
        adam_step(learner.critic_mut(), &grads, &mut opt, 1e-3).unwrap();
        assert_eq!(learner.critic(), &before);
    }

    #[test]
    fn updates_touch_only_their_networks() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut learner = Learner::new(small_config(), &mut rng).unwrap();
        let batch: Vec<SequenceSample> = (0..4).map(|_| sample(&mut rng, 3, DoneReason::Running)).collect();
        let actors = learner.actors().to_vec();
        learner.update_critic(&batch).unwrap();
        assert_eq!(learner.actors(), &actors[..]);
        let critic = learner.critic().clone();
        learner.update_actors(&batch).unwrap();
        assert_eq!(learner.critic(), &critic);
        assert_ne!(learner.actors(), &actors[..]);
    }

    #[test]
    fn per_agent_actors_stay_separate() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cfg = LearnerConfig {
            share_actor: false,
            ..small_config()
        };
        let mut learner = Learner::new(cfg, &mut rng).unwrap();
        assert_eq!(learner.actors().len(), 3);
        let batch: Vec<SequenceSample> = (0..4).map(|_| sample(&mut rng, 3, DoneReason::Running)).collect();
        learner.train_step(&batch).unwrap();
        assert_ne!(learner.actor_for(0), learner.actor_for(1));

        let mut shared = Learner::new(small_config(), &mut rng).unwrap();
        shared.train_step(&batch).unwrap();
        assert_eq!(shared.actor_for(0), shared.actor_for(2));
    }

    #[test]
    fn constant_critic_gives_zero_actor_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut learner = Learner::new(small_config(), &mut rng).unwrap();
        // Zero the critic's first-layer columns that read agent 1's newest action.
        let off = learner.last_action_offset(1);
        let mut layers = learner.critic().layers().to_vec();
        for r in 0..layers[0].weights.nrows() {
            layers[0].weights[[r, off]] = 0.0;
            layers[0].weights[[r, off + 1]] = 0.0;
        }
        *learner.critic_mut() = MlpParams::from_layers(layers).unwrap();
        let batch: Vec<SequenceSample> = (0..4).map(|_| sample(&mut rng, 3, DoneReason::Running)).collect();
        let (_, g) = learner.actor_objective_and_grads(&batch, 1).unwrap();
        assert!(g.flat().iter().all(|v| *v == 0.0));
        let (_, g) = learner.actor_objective_and_grads(&batch, 0).unwrap();
        assert!(g.flat().iter().any(|v| *v != 0.0));
    }

    #[test]
    fn soft_update_uses_tau() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut learner = Learner::new(small_config(), &mut rng).unwrap();
        let before = learner.target_critic().flat();
        let mut shifted = learner.critic().flat();
        for v in &mut shifted {
            *v += 1.0;
        }
        learner.critic_mut().set_flat(&shifted).unwrap();
        learner.soft_update_targets().unwrap();
        for (t, b) in learner.target_critic().flat().iter().zip(&before) {
            assert!((t - (b + 5e-3)).abs() < 1e-12);
        }
    }
}
