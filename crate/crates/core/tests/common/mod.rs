#![allow(dead_code)]

use std::sync::Arc;

use ndarray::Array2;
use rand::Rng;

use formation_marl::env::{reset, step, AgentAction, EnvConfig};
use formation_marl::formation::FormationSpec;
use formation_marl::learner::Learner;
use formation_marl::nn::{init_mlp, Activation, MlpParams};
use formation_marl::replay::{ReplayBuffer, SequenceSample, Transition};

pub const FD_STEP: f64 = 1e-6;

/// Symmetric relative error with a floor so that two near-zero values agree.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs()).max(1e-6)
}

pub fn random_mlp<R: Rng>(rng: &mut R) -> MlpParams {
    let depth = rng.random_range(1..=3);
    let mut sizes = vec![rng.random_range(1..=6)];
    for _ in 0..depth {
        sizes.push(rng.random_range(1..=6));
    }
    let acts: Vec<Activation> = (0..depth)
        .map(|_| match rng.random_range(0..3) {
            0 => Activation::Tanh,
            1 => Activation::Relu,
            _ => Activation::Linear,
        })
        .collect();
    let mut net = init_mlp(&sizes, &acts, rng).unwrap();
    // Non-zero biases so ReLU kinks are not all at the origin.
    let flat: Vec<f64> = net.flat().iter().map(|w| w + rng.random_range(-0.3..0.3)).collect();
    net.set_flat(&flat).unwrap();
    net
}

fn weighted_output(net: &MlpParams, x: &Array2<f64>, upstream: &Array2<f64>) -> f64 {
    let out = net.forward_batch(x.view()).unwrap();
    (out.output() * upstream).sum()
}

/// Worst relative error between backprop and central differences over every
/// parameter and every input entry of `L = Σ upstream ⊙ net(x)`.
pub fn mlp_gradient_error<R: Rng>(net: &MlpParams, rng: &mut R) -> f64 {
    let batch = rng.random_range(1..=4);
    let x = Array2::from_shape_simple_fn((batch, net.input_dim()), || rng.random_range(-1.5..1.5));
    let upstream = Array2::from_shape_simple_fn((batch, net.output_dim()), || rng.random_range(-1.0..1.0));
    let cache = net.forward_batch(x.view()).unwrap();
    let grads = net.backward_batch(&cache, upstream.view()).unwrap();

    let mut worst = 0.0f64;
    let base = net.flat();
    for (k, g) in grads.flat().iter().enumerate() {
        let mut probe = net.clone();
        let mut p = base.clone();
        p[k] += FD_STEP;
        probe.set_flat(&p).unwrap();
        let up = weighted_output(&probe, &x, &upstream);
        p[k] -= 2.0 * FD_STEP;
        probe.set_flat(&p).unwrap();
        let down = weighted_output(&probe, &x, &upstream);
        worst = worst.max(rel_err(*g, (up - down) / (2.0 * FD_STEP)));
    }
    for ((b, j), g) in grads.input.indexed_iter() {
        let mut xp = x.clone();
        xp[[b, j]] += FD_STEP;
        let up = weighted_output(net, &xp, &upstream);
        xp[[b, j]] -= 2.0 * FD_STEP;
        let down = weighted_output(net, &xp, &upstream);
        worst = worst.max(rel_err(*g, (up - down) / (2.0 * FD_STEP)));
    }
    worst
}

/// Worst relative error of the actor-through-critic gradient for `agent`.
pub fn actor_objective_gradient_error(learner: &Learner, batch: &[SequenceSample], agent: usize) -> f64 {
    let (_, grads) = learner.actor_objective_and_grads(batch, agent).unwrap();
    let k_actor = if learner.config.share_actor { 0 } else { agent };
    let base = learner.actors()[k_actor].flat();
    let mut probe = learner.clone();
    let mut worst = 0.0f64;
    for (k, g) in grads.flat().iter().enumerate() {
        let mut p = base.clone();
        p[k] += FD_STEP;
        probe.actor_mut(k_actor).set_flat(&p).unwrap();
        let (up, _) = probe.actor_objective_and_grads(batch, agent).unwrap();
        p[k] -= 2.0 * FD_STEP;
        probe.actor_mut(k_actor).set_flat(&p).unwrap();
        let (down, _) = probe.actor_objective_and_grads(batch, agent).unwrap();
        worst = worst.max(rel_err(*g, (up - down) / (2.0 * FD_STEP)));
    }
    worst
}

/// Fill a buffer with episodes of uniformly random actions.
pub fn random_replay<R: Rng>(
    spec: &Arc<FormationSpec>,
    env: &EnvConfig,
    episodes: usize,
    capacity: usize,
    rng: &mut R,
) -> ReplayBuffer {
    let mut buffer = ReplayBuffer::new(capacity);
    for e in 0..episodes {
        let (mut state, mut obs) = reset(spec.clone(), env, rng).unwrap();
        loop {
            let actions: Vec<AgentAction> = (0..spec.n_agents())
                .map(|_| AgentAction::new(rng.random_range(0.0..env.v_max), rng.random_range(-env.w_max..env.w_max)))
                .collect();
            let result = step(&state, &actions, env).unwrap();
            buffer.push(Transition::from_step(e as u64, &state, &obs, &actions, &result));
            obs = result.observations.clone();
            state = result.next_state;
            if result.done {
                break;
            }
        }
    }
    buffer
}
