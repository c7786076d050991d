//! Training configuration. Every field has a default, so config files only
//! need to list what they change.

use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{EnvConfig, RewardConfig};
use crate::error::{Error, Result};
use crate::formation::{build_rigid_graph, triangle, FormationSpec, Thresholds};
use crate::learner::LearnerConfig;

/// How the formation of each training episode is chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FormationChoice {
    /// The same formation every episode.
    Fixed { spec: FormationSpec },
    /// Three agents, side lengths drawn uniformly from `[min_side, max_side]`.
    RandomTriangle { min_side: f64, max_side: f64 },
}

impl Default for FormationChoice {
    fn default() -> Self {
        FormationChoice::RandomTriangle {
            min_side: 0.8,
            max_side: 1.5,
        }
    }
}

impl FormationChoice {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Arc<FormationSpec>> {
        match self {
            FormationChoice::Fixed { spec } => Ok(Arc::new(spec.clone())),
            FormationChoice::RandomTriangle { min_side, max_side } => {
                let sides: Vec<f64> = (0..3).map(|_| rng.random_range(*min_side..=*max_side)).collect();
                Ok(Arc::new(build_rigid_graph(3, &sides)?))
            }
        }
    }

    pub fn n_agents(&self) -> usize {
        match self {
            FormationChoice::Fixed { spec } => spec.n_agents(),
            FormationChoice::RandomTriangle { .. } => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub n_agents: usize,
    pub formation: FormationChoice,
    pub arena_side: f64,
    pub max_steps: usize,
    pub episodes: usize,
    /// Observation history length fed to the networks.
    pub history: usize,
    pub dt: f64,
    pub v_max: f64,
    pub w_max: f64,
    pub thresholds: Thresholds,
    pub rewards: RewardConfig,
    /// Curriculum: draw goals within this radius of the start centroid.
    pub goal_radius: Option<f64>,
    pub tau: f64,
    pub gamma: f64,
    pub seed: u64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub actor_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    pub share_actor: bool,
    /// Clamp TD targets to the range of achievable returns.
    pub clip_targets: bool,
    /// Exploration noise as a fraction of each action range, annealed
    /// exponentially from `noise_initial` to `noise_final`.
    pub noise_initial: f64,
    pub noise_final: f64,
    /// Probability that a sampled sequence is relabeled with its achieved goal.
    pub relabel_ratio: f64,
    pub buffer_capacity: usize,
    pub batch_size: usize,
    /// Updates start once the buffer holds this many batches worth of windows.
    pub warmup_batches: usize,
    pub checkpoint_every: usize,
    /// Keep the full step trace of every `trace_every`-th training episode.
    pub trace_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let env = EnvConfig::default();
        let learner = LearnerConfig::default();
        Self {
            n_agents: 3,
            formation: FormationChoice::default(),
            arena_side: env.arena_side,
            max_steps: env.max_steps,
            episodes: 20_000,
            history: learner.history,
            dt: env.dt,
            v_max: env.v_max,
            w_max: env.w_max,
            thresholds: env.thresholds,
            rewards: env.rewards,
            goal_radius: None,
            tau: learner.tau,
            gamma: learner.gamma,
            seed: 0,
            actor_lr: learner.actor_lr,
            critic_lr: learner.critic_lr,
            actor_hidden: learner.actor_hidden,
            critic_hidden: learner.critic_hidden,
            share_actor: learner.share_actor,
            clip_targets: true,
            noise_initial: 0.3,
            noise_final: 0.05,
            relabel_ratio: 0.5,
            buffer_capacity: 1_000_000,
            batch_size: 64,
            warmup_batches: 5,
            checkpoint_every: 500,
            trace_every: 100,
        }
    }
}

impl TrainConfig {
    /// Desk-scale run: fixed unit triangle, goals within 3 m, 60-step episodes.
    pub fn smoke(seed: u64) -> Self {
        Self {
            formation: FormationChoice::Fixed {
                spec: triangle(1.0).expect("unit triangle"),
            },
            goal_radius: Some(3.0),
            max_steps: 60,
            episodes: 2000,
            seed,
            actor_hidden: vec![64, 64],
            critic_hidden: vec![128, 128],
            ..Self::default()
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: TrainConfig = match path.extension().and_then(|e| e.to_str()) {
            Some("toml") => toml::from_str(&text).map_err(|e| Error::InvalidConfig(e.to_string()))?,
            _ => serde_json::from_str(&text)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.thresholds.validate()?;
        self.learner_config().validate()?;
        if self.formation.n_agents() != self.n_agents {
            return Err(Error::InvalidConfig(format!(
                "n_agents is {} but the formation has {} agents",
                self.n_agents,
                self.formation.n_agents()
            )));
        }
        if let FormationChoice::RandomTriangle { min_side, max_side } = self.formation {
            if !(min_side > 0.0 && min_side <= max_side && max_side < 2.0 * min_side) {
                return Err(Error::InvalidConfig(format!(
                    "random triangle sides [{min_side}, {max_side}] may violate the triangle inequality"
                )));
            }
        }
        if let FormationChoice::Fixed { spec } = &self.formation {
            spec.check_clearance(&self.thresholds)?;
        }
        if self.max_steps == 0 || self.batch_size == 0 || self.buffer_capacity == 0 {
            return Err(Error::InvalidConfig(
                "max_steps, batch_size and buffer_capacity must be positive".into(),
            ));
        }
        if !(self.dt > 0.0 && self.arena_side > 0.0 && self.v_max > 0.0 && self.w_max > 0.0) {
            return Err(Error::InvalidConfig("dt, arena_side, v_max and w_max must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.relabel_ratio) {
            return Err(Error::InvalidConfig("relabel_ratio must be in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn env_config(&self) -> EnvConfig {
        EnvConfig {
            arena_side: self.arena_side,
            max_steps: self.max_steps,
            dt: self.dt,
            v_max: self.v_max,
            w_max: self.w_max,
            thresholds: self.thresholds,
            rewards: self.rewards,
            goal_radius: self.goal_radius,
        }
    }

    pub fn learner_config(&self) -> LearnerConfig {
        LearnerConfig {
            n_agents: self.n_agents,
            history: self.history,
            gamma: self.gamma,
            tau: self.tau,
            actor_lr: self.actor_lr,
            critic_lr: self.critic_lr,
            actor_hidden: self.actor_hidden.clone(),
            critic_hidden: self.critic_hidden.clone(),
            share_actor: self.share_actor,
            v_max: self.v_max,
            w_max: self.w_max,
            value_bounds: if self.clip_targets {
                self.rewards.return_bounds(self.gamma)
            } else {
                None
            },
        }
    }

    /// Exploration scale for a 0-based training episode.
    pub fn noise_scale(&self, episode: usize) -> f64 {
        if self.episodes <= 1 || self.noise_initial <= 0.0 {
            return self.noise_initial;
        }
        let frac = episode as f64 / (self.episodes - 1) as f64;
        self.noise_initial * (self.noise_final / self.noise_initial).powf(frac.min(1.0))
    }
}
