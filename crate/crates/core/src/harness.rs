//! Episode runner, training loop and evaluation.
//!
//! Random streams are split per purpose from one seed, so changing e.g. the
//! replay sampling cannot perturb the sequence of episodes:
//! stream 0 network init, 1 episode starts, 2 exploration noise,
//! 3 replay sampling and relabeling, 4 evaluation episode starts.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baseline::{baseline_actions, BaselineGains};
use crate::checkpoint::Checkpoint;
use crate::config::TrainConfig;
use crate::env::{reset, step, AgentAction, DoneReason, EnvConfig, EnvState, Observation};
use crate::error::{Error, Result};
use crate::formation::{edge_errors, FormationSpec};
use crate::learner::Learner;
use crate::replay::{her_relabel, ReplayBuffer, Transition};

pub const STREAM_INIT: u64 = 0;
pub const STREAM_EPISODES: u64 = 1;
pub const STREAM_NOISE: u64 = 2;
pub const STREAM_REPLAY: u64 = 3;
pub const STREAM_EVAL: u64 = 4;

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Chooses the joint action each step. `histories[i]` holds every
/// observation agent `i` has made this episode, oldest first.
pub trait Policy {
    fn act(&mut self, state: &EnvState, histories: &[Vec<Observation>]) -> Result<Vec<AgentAction>>;

    /// Whether `observe` should be fed the transitions of the episode.
    fn wants_transitions(&self) -> bool {
        false
    }

    fn observe(&mut self, _transition: Transition) -> Result<()> {
        Ok(())
    }
}

/// Always stands still.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroPolicy;

impl Policy for ZeroPolicy {
    fn act(&mut self, state: &EnvState, _histories: &[Vec<Observation>]) -> Result<Vec<AgentAction>> {
        Ok(vec![AgentAction::ZERO; state.n_agents()])
    }
}

/// The scripted controller of [`crate::baseline`].
#[derive(Debug, Clone)]
pub struct BaselinePolicy {
    pub env: EnvConfig,
    pub gains: BaselineGains,
}

impl Policy for BaselinePolicy {
    fn act(&mut self, state: &EnvState, _histories: &[Vec<Observation>]) -> Result<Vec<AgentAction>> {
        Ok(baseline_actions(state, &self.env, &self.gains))
    }
}

/// Noise-free actors; each agent sees only its own observation history.
#[derive(Debug, Clone, Copy)]
pub struct GreedyPolicy<'a> {
    pub learner: &'a Learner,
}

impl Policy for GreedyPolicy<'_> {
    fn act(&mut self, _state: &EnvState, histories: &[Vec<Observation>]) -> Result<Vec<AgentAction>> {
        // Noise scale 0 draws nothing from the generator.
        let mut unused = ChaCha8Rng::seed_from_u64(0);
        histories
            .iter()
            .enumerate()
            .map(|(i, h)| self.learner.act(i, h, 0.0, &mut unused))
            .collect()
    }
}

/// Exploring actors that store every transition and take one gradient step
/// per environment step once the buffer is warm.
#[derive(Debug)]
pub struct Trainer {
    pub learner: Learner,
    pub replay: ReplayBuffer,
    pub noise_scale: f64,
    relabel_ratio: f64,
    batch_size: usize,
    warmup_windows: usize,
    env: EnvConfig,
    noise_rng: ChaCha8Rng,
    replay_rng: ChaCha8Rng,
    warm: bool,
    critic_loss_sum: f64,
    actor_objective_sum: f64,
    updates: usize,
}

impl Trainer {
    pub fn new(config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        let mut init_rng = stream_rng(config.seed, STREAM_INIT);
        Ok(Self {
            learner: Learner::new(config.learner_config(), &mut init_rng)?,
            replay: ReplayBuffer::new(config.buffer_capacity),
            noise_scale: config.noise_initial,
            relabel_ratio: config.relabel_ratio,
            batch_size: config.batch_size,
            warmup_windows: config.warmup_batches.max(1) * config.batch_size,
            env: config.env_config(),
            noise_rng: stream_rng(config.seed, STREAM_NOISE),
            replay_rng: stream_rng(config.seed, STREAM_REPLAY),
            warm: false,
            critic_loss_sum: 0.0,
            actor_objective_sum: 0.0,
            updates: 0,
        })
    }

    /// Mean critic loss and actor objective since the last call, if any
    /// update happened.
    pub fn take_stats(&mut self) -> Option<(f64, f64)> {
        let n = std::mem::take(&mut self.updates);
        let loss = std::mem::take(&mut self.critic_loss_sum);
        let obj = std::mem::take(&mut self.actor_objective_sum);
        (n > 0).then(|| (loss / n as f64, obj / n as f64))
    }

    fn update(&mut self) -> Result<()> {
        let h = self.learner.config.history;
        if !self.warm {
            self.warm = self.replay.window_count(h) >= self.warmup_windows;
            if !self.warm {
                return Ok(());
            }
        }
        let mut batch = self.replay.sample_sequences(self.batch_size, h, &mut self.replay_rng)?;
        for sample in batch.iter_mut() {
            if self.replay_rng.random::<f64>() < self.relabel_ratio {
                *sample = her_relabel(sample, &self.env);
            }
        }
        let stats = self.learner.train_step(&batch)?;
        self.critic_loss_sum += stats.critic_loss;
        self.actor_objective_sum += stats.actor_objective;
        self.updates += 1;
        Ok(())
    }
}

impl Policy for Trainer {
    fn act(&mut self, _state: &EnvState, histories: &[Vec<Observation>]) -> Result<Vec<AgentAction>> {
        let noise = self.noise_scale;
        histories
            .iter()
            .enumerate()
            .map(|(i, h)| self.learner.act(i, h, noise, &mut self.noise_rng))
            .collect()
    }

    fn wants_transitions(&self) -> bool {
        true
    }

    fn observe(&mut self, transition: Transition) -> Result<()> {
        self.replay.push(transition);
        self.update()
    }
}

/// One row of an episode trace. Row `t` holds the state after `t` steps,
/// the action then applied (zero on the last row) and the reward received
/// on arriving at that state (zero on row 0).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub poses: Vec<[f64; 3]>,
    pub actions: Vec<[f64; 2]>,
    pub edge_errors: Vec<f64>,
    pub centroid_goal_dist: f64,
    pub reward: f64,
    pub done_reason: DoneReason,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub formation: FormationSpec,
    pub goal: [f64; 2],
    pub total_reward: f64,
    /// Number of environment steps taken.
    pub length: usize,
    pub outcome: DoneReason,
    /// Mean edge error over the second half of the episode.
    pub settled_edge_error: f64,
    pub final_max_edge_error: f64,
    pub final_centroid_goal_dist: f64,
    /// Empty unless the trace was kept.
    pub steps: Vec<StepRecord>,
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

fn step_record(state: &EnvState, reward: f64) -> StepRecord {
    let positions = state.positions();
    StepRecord {
        step: state.step_index,
        poses: state.poses.iter().map(|p| [p.x, p.y, p.theta()]).collect(),
        actions: vec![[0.0, 0.0]; state.n_agents()],
        edge_errors: edge_errors(&positions, &state.spec),
        centroid_goal_dist: state.centroid().distance(&state.goal),
        reward,
        done_reason: state.status,
    }
}

/// Play one episode to completion.
pub fn run_episode<R: Rng + ?Sized>(
    episode: usize,
    spec: Arc<FormationSpec>,
    env: &EnvConfig,
    policy: &mut dyn Policy,
    rng: &mut R,
    keep_trace: bool,
) -> Result<EpisodeRecord> {
    let (mut state, obs) = reset(spec.clone(), env, rng)?;
    let mut histories: Vec<Vec<Observation>> = obs.into_iter().map(|o| vec![o]).collect();
    let mut mean_edge_errors = vec![mean(&edge_errors(&state.positions(), &spec))];
    let mut steps = Vec::new();
    if keep_trace {
        steps.push(step_record(&state, 0.0));
    }
    let mut total_reward = 0.0;
    loop {
        let actions = policy.act(&state, &histories)?;
        let result = step(&state, &actions, env)?;
        if let Some(last) = steps.last_mut() {
            last.actions = actions
                .iter()
                .map(|a| {
                    let a = a.clamped(env.v_max, env.w_max);
                    [a.v, a.w]
                })
                .collect();
        }
        if policy.wants_transitions() {
            let prev_obs: Vec<Observation> = histories.iter().map(|h| *h.last().expect("history")).collect();
            policy.observe(Transition::from_step(episode as u64, &state, &prev_obs, &actions, &result))?;
        }
        total_reward += result.reward;
        for (h, o) in histories.iter_mut().zip(&result.observations) {
            h.push(*o);
        }
        state = result.next_state;
        mean_edge_errors.push(mean(&edge_errors(&state.positions(), &spec)));
        if keep_trace {
            steps.push(step_record(&state, result.reward));
        }
        if result.done {
            break;
        }
    }
    let final_errors = edge_errors(&state.positions(), &spec);
    Ok(EpisodeRecord {
        episode,
        formation: (*spec).clone(),
        goal: [state.goal.x, state.goal.y],
        total_reward,
        length: state.step_index,
        outcome: state.status,
        settled_edge_error: mean(&mean_edge_errors[mean_edge_errors.len() / 2..]),
        final_max_edge_error: final_errors.iter().copied().fold(0.0, f64::max),
        final_centroid_goal_dist: state.centroid().distance(&state.goal),
        steps,
    })
}

/// Per-episode training metrics, one row of `metrics.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeMetrics {
    pub episode: usize,
    pub total_reward: f64,
    pub length: usize,
    pub outcome: DoneReason,
    pub critic_loss: Option<f64>,
    pub actor_objective: Option<f64>,
    pub noise_scale: f64,
    pub train_steps: u64,
    pub trailing_mean_reward: f64,
}

pub const METRICS_HEADER: &str =
    "episode,total_reward,length,outcome,critic_loss,actor_objective,noise_scale,train_steps,trailing_mean_reward";

/// Window of the trailing mean reward column.
pub const TRAILING_WINDOW: usize = 100;

impl EpisodeMetrics {
    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.episode,
            self.total_reward,
            self.length,
            self.outcome,
            opt(self.critic_loss),
            opt(self.actor_objective),
            self.noise_scale,
            self.train_steps,
            self.trailing_mean_reward
        )
    }
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub learner: Learner,
    pub metrics: Vec<EpisodeMetrics>,
}

/// File layout of a training run directory.
#[derive(Debug, Clone)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.json")
    }

    pub fn metrics(&self) -> PathBuf {
        self.root.join("metrics.csv")
    }

    pub fn records(&self) -> PathBuf {
        self.root.join("records.jsonl")
    }

    pub fn checkpoint(&self, episode: usize) -> PathBuf {
        self.root.join("checkpoints").join(format!("episode_{episode:06}.json"))
    }

    pub fn final_checkpoint(&self) -> PathBuf {
        self.root.join("checkpoint.json")
    }

    pub fn trace_csv(&self, episode: usize) -> PathBuf {
        self.root.join("traces").join(format!("episode_{episode:06}.csv"))
    }
}

struct RunWriters {
    dir: RunDir,
    metrics: BufWriter<File>,
    records: BufWriter<File>,
}

impl RunWriters {
    fn create(dir: RunDir, config: &TrainConfig) -> Result<Self> {
        fs::create_dir_all(dir.root.join("checkpoints"))?;
        fs::write(dir.config(), serde_json::to_string_pretty(config)?)?;
        let mut metrics = BufWriter::new(File::create(dir.metrics())?);
        writeln!(metrics, "{METRICS_HEADER}")?;
        let records = BufWriter::new(File::create(dir.records())?);
        Ok(Self { dir, metrics, records })
    }
}

fn write_record(out: &mut impl Write, record: &EpisodeRecord) -> Result<()> {
    serde_json::to_writer(&mut *out, record)?;
    writeln!(out)?;
    Ok(())
}

/// Train for `config.episodes` episodes. With `out`, writes the run directory
/// (config, metrics, traced episodes, periodic and final checkpoints).
/// `progress` is called after every episode.
pub fn train(
    config: &TrainConfig,
    out: Option<&Path>,
    mut progress: impl FnMut(&EpisodeMetrics),
) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(config)?;
    let env = config.env_config();
    let mut episode_rng = stream_rng(config.seed, STREAM_EPISODES);
    let mut writers = out.map(|p| RunWriters::create(RunDir::new(p), config)).transpose()?;
    let mut metrics: Vec<EpisodeMetrics> = Vec::with_capacity(config.episodes);
    let mut window_sum = 0.0;

    for episode in 0..config.episodes {
        trainer.noise_scale = config.noise_scale(episode);
        let spec = config.formation.sample(&mut episode_rng)?;
        let keep_trace = writers.is_some() && config.trace_every > 0 && episode % config.trace_every == 0;
        let record = run_episode(episode, spec, &env, &mut trainer, &mut episode_rng, keep_trace)?;

        window_sum += record.total_reward;
        if episode >= TRAILING_WINDOW {
            window_sum -= metrics[episode - TRAILING_WINDOW].total_reward;
        }
        let stats = trainer.take_stats();
        let row = EpisodeMetrics {
            episode,
            total_reward: record.total_reward,
            length: record.length,
            outcome: record.outcome,
            critic_loss: stats.map(|s| s.0),
            actor_objective: stats.map(|s| s.1),
            noise_scale: trainer.noise_scale,
            train_steps: trainer.learner.train_steps(),
            trailing_mean_reward: window_sum / (episode + 1).min(TRAILING_WINDOW) as f64,
        };
        progress(&row);

        if let Some(w) = writers.as_mut() {
            writeln!(w.metrics, "{}", row.csv_row())?;
            if keep_trace {
                write_record(&mut w.records, &record)?;
            }
            let done = episode + 1;
            if config.checkpoint_every > 0 && done % config.checkpoint_every == 0 {
                w.metrics.flush()?;
                w.records.flush()?;
                Checkpoint::new(config.clone(), done, trainer.learner.clone()).save(&w.dir.checkpoint(done))?;
            }
        }
        metrics.push(row);
    }

    if let Some(mut w) = writers {
        w.metrics.flush()?;
        w.records.flush()?;
        Checkpoint::new(config.clone(), config.episodes, trainer.learner.clone()).save(&w.dir.final_checkpoint())?;
    }
    Ok(TrainOutcome {
        learner: trainer.learner,
        metrics,
    })
}

/// Aggregate results of a set of evaluation episodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub episodes: usize,
    pub success_rate: f64,
    pub collision_rate: f64,
    pub timeout_rate: f64,
    pub mean_total_reward: f64,
    pub mean_length: f64,
    pub mean_settled_edge_error: f64,
    pub mean_final_centroid_goal_dist: f64,
}

impl EvalSummary {
    pub fn from_records(records: &[EpisodeRecord]) -> Self {
        let n = records.len().max(1) as f64;
        let rate = |r: DoneReason| records.iter().filter(|e| e.outcome == r).count() as f64 / n;
        let avg = |f: fn(&EpisodeRecord) -> f64| records.iter().map(f).sum::<f64>() / n;
        Self {
            episodes: records.len(),
            success_rate: rate(DoneReason::Success),
            collision_rate: rate(DoneReason::Collision),
            timeout_rate: rate(DoneReason::Timeout),
            mean_total_reward: avg(|e| e.total_reward),
            mean_length: avg(|e| e.length as f64),
            mean_settled_edge_error: avg(|e| e.settled_edge_error),
            mean_final_centroid_goal_dist: avg(|e| e.final_centroid_goal_dist),
        }
    }
}

/// Run `episodes` episodes of `policy` with full traces. Episode starts come
/// from the evaluation stream of `seed`, so they differ from training starts.
pub fn evaluate_policy(
    policy: &mut dyn Policy,
    config: &TrainConfig,
    episodes: usize,
    seed: u64,
) -> Result<(EvalSummary, Vec<EpisodeRecord>)> {
    config.validate()?;
    let env = config.env_config();
    let mut rng = stream_rng(seed, STREAM_EVAL);
    let records = (0..episodes)
        .map(|e| {
            let spec = config.formation.sample(&mut rng)?;
            run_episode(e, spec, &env, policy, &mut rng, true)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((EvalSummary::from_records(&records), records))
}

/// Greedy evaluation of trained actors. The learner is borrowed immutably,
/// so evaluation cannot change it.
pub fn evaluate(
    learner: &Learner,
    config: &TrainConfig,
    episodes: usize,
    seed: u64,
) -> Result<(EvalSummary, Vec<EpisodeRecord>)> {
    evaluate_policy(&mut GreedyPolicy { learner }, config, episodes, seed)
}

pub fn run_baseline(
    config: &TrainConfig,
    episodes: usize,
    seed: u64,
) -> Result<(EvalSummary, Vec<EpisodeRecord>)> {
    let mut policy = BaselinePolicy {
        env: config.env_config(),
        gains: BaselineGains::default(),
    };
    evaluate_policy(&mut policy, config, episodes, seed)
}

/// Write an evaluation directory: summary, all records and per-episode CSVs.
pub fn write_eval_dir(out: &Path, summary: &EvalSummary, records: &[EpisodeRecord]) -> Result<()> {
    let dir = RunDir::new(out);
    fs::create_dir_all(out.join("traces"))?;
    fs::write(out.join("summary.json"), serde_json::to_string_pretty(summary)?)?;
    let mut w = BufWriter::new(File::create(dir.records())?);
    for r in records {
        write_record(&mut w, r)?;
        let mut csv = BufWriter::new(File::create(dir.trace_csv(r.episode))?);
        write_trace_csv(r, &mut csv)?;
        csv.flush()?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records(path: &Path) -> Result<Vec<EpisodeRecord>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

/// Trace as CSV: one row per step with pose and action of every agent,
/// every edge error, the centroid-goal distance, reward and status.
pub fn write_trace_csv(record: &EpisodeRecord, out: &mut impl Write) -> Result<()> {
    if record.steps.is_empty() {
        return Err(Error::InvalidConfig(format!("episode {} has no stored trace", record.episode)));
    }
    let n = record.formation.n_agents();
    let mut header = vec!["step".to_string()];
    for i in 0..n {
        for c in ["x", "y", "theta", "v", "w"] {
            header.push(format!("{c}{i}"));
        }
    }
    for k in 0..record.formation.edges().len() {
        header.push(format!("e{k}_error"));
    }
    header.extend(["centroid_goal_dist", "reward", "done_reason"].map(String::from));
    writeln!(out, "{}", header.join(","))?;
    for s in &record.steps {
        let mut row = vec![s.step.to_string()];
        for (p, a) in s.poses.iter().zip(&s.actions) {
            row.extend([p[0], p[1], p[2], a[0], a[1]].iter().map(f64::to_string));
        }
        row.extend(s.edge_errors.iter().map(f64::to_string));
        row.push(s.centroid_goal_dist.to_string());
        row.push(s.reward.to_string());
        row.push(s.done_reason.to_string());
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}
