//! Clipped-surrogate machinery shared by the central PPO baseline and the
//! cooperative trainer, plus the central PPO agent itself.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{mix_seed, ActionSpace, AgentError, EpisodeSummary, Features, Learner, DEFAULT_MIN_ORDER_FRACTION};
use crate::env::{Action, Observation, Scenario, SupplyChainEnv};
use crate::nn::{
    backward, forward, gaussian_head_sample, gaussian_log_density, init_network, log_prob_gradient, Activation,
    Batch, Direction, Gradient, MlpParams, Optimizer, OptimizerSpec, OutputHead,
};

/// `clip(eta, 1 - sigma, 1 + sigma)`.
pub fn clip_ratio(eta: f64, sigma: f64) -> f64 {
    eta.clamp(1.0 - sigma, 1.0 + sigma)
}

/// `min(eta * A, clip(eta) * A)`; `None` disables clipping.
pub fn clipped_objective(eta: f64, advantage: f64, clip: Option<f64>) -> f64 {
    match clip {
        None => eta * advantage,
        Some(s) => f64::min(eta * advantage, clip_ratio(eta, s) * advantage),
    }
}

/// Derivative of [`clipped_objective`] with respect to `ln pi`: `eta * A` while the
/// unclipped branch is active, zero once the clipped branch takes over.
pub fn surrogate_coef(eta: f64, advantage: f64, clip: Option<f64>) -> f64 {
    match clip {
        None => eta * advantage,
        Some(s) => {
            if eta * advantage <= clip_ratio(eta, s) * advantage {
                eta * advantage
            } else {
                0.0
            }
        }
    }
}

/// One recorded decision of a Gaussian-head actor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub state: Vec<f64>,
    /// Pre-squash Gaussian sample.
    pub raw_action: Vec<f64>,
    pub reward: f64,
    pub next_state: Vec<f64>,
    /// Log-density of `raw_action` under the acting parameters.
    pub log_prob: f64,
    pub done: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SurrogateStats {
    pub objective: f64,
    pub mean_ratio: f64,
    /// Rows whose clipped branch was active.
    pub clipped: usize,
    pub rows: usize,
}

pub(crate) fn batch_from<'a>(rows: impl Iterator<Item = &'a [f64]>, cols: usize) -> Result<Batch, AgentError> {
    let mut data = Vec::new();
    let mut n = 0;
    for r in rows {
        data.extend_from_slice(r);
        n += 1;
    }
    Ok(Batch::from_flat(n, cols, data)?)
}

/// Gradient (ascent direction) of `sum_r w_r * min(eta_r A_r, clip(eta_r) A_r)`.
pub fn surrogate_gradient(
    actor: &MlpParams,
    states: &Batch,
    raw_actions: &Batch,
    old_log_probs: &[f64],
    advantages: &[f64],
    weights: &[f64],
    clip: Option<f64>,
) -> Result<(Gradient, SurrogateStats), AgentError> {
    let rows = states.rows();
    if old_log_probs.len() != rows || advantages.len() != rows || weights.len() != rows {
        return Err(AgentError::Config("surrogate batch lengths differ".into()));
    }
    if rows == 0 {
        return Err(AgentError::Empty("surrogate batch"));
    }
    let (mean, _) = forward(actor, states)?;
    let mut coefs = Vec::with_capacity(rows);
    let mut stats = SurrogateStats { rows, ..Default::default() };
    for r in 0..rows {
        let lp = gaussian_log_density(mean.row(r), &actor.log_std, raw_actions.row(r));
        let eta = libm::exp(lp - old_log_probs[r]);
        let a = advantages[r];
        let c = surrogate_coef(eta, a, clip);
        if c == 0.0 && eta * a != 0.0 {
            stats.clipped += 1;
        }
        stats.objective += weights[r] * clipped_objective(eta, a, clip);
        stats.mean_ratio += eta / rows as f64;
        coefs.push(weights[r] * c);
    }
    let (g, _) = log_prob_gradient(actor, states, raw_actions, &coefs)?;
    Ok((g, stats))
}

/// Gradient (ascent direction) of `-sum_r w_r (y_r - V(x_r))^2 / 2` and that loss.
pub fn value_gradient(
    critic: &MlpParams,
    states: &Batch,
    targets: &[f64],
    weights: &[f64],
) -> Result<(Gradient, f64), AgentError> {
    let rows = states.rows();
    if targets.len() != rows || weights.len() != rows {
        return Err(AgentError::Config("value batch lengths differ".into()));
    }
    let (v, cache) = forward(critic, states)?;
    let mut up = Batch::zeros(rows, 1);
    let mut loss = 0.0;
    for r in 0..rows {
        let d = targets[r] - v.row(r)[0];
        up.row_mut(r)[0] = weights[r] * d;
        loss += 0.5 * weights[r] * d * d;
    }
    Ok((backward(critic, &cache, &up)?, loss))
}

/// Critic outputs for a list of states.
pub fn values_of(critic: &MlpParams, states: &[&[f64]]) -> Result<Vec<f64>, AgentError> {
    if states.is_empty() {
        return Ok(Vec::new());
    }
    let b = batch_from(states.iter().copied(), critic.input_size())?;
    let (v, _) = forward(critic, &b)?;
    Ok((0..b.rows()).map(|r| v.row(r)[0]).collect())
}

/// Generalised advantage estimates and the matching return targets.
pub fn gae(
    rewards: &[f64],
    values: &[f64],
    next_values: &[f64],
    dones: &[bool],
    gamma: f64,
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    let mut adv = alloc::vec![0.0; n];
    let mut running = 0.0;
    for t in (0..n).rev() {
        let boot = if dones[t] { 0.0 } else { next_values[t] };
        let delta = rewards[t] + gamma * boot - values[t];
        running = if dones[t] { delta } else { delta + gamma * lambda * running };
        adv[t] = running;
    }
    let ret = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, ret)
}

pub(crate) fn normalize(v: &mut [f64]) {
    let n = v.len();
    if n < 2 {
        return;
    }
    let mean = v.iter().sum::<f64>() / n as f64;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
    let sd = libm::sqrt(var) + 1e-8;
    for x in v.iter_mut() {
        *x = (*x - mean) / sd;
    }
}

/// Samples a raw action and its log-density, and returns the squashed units.
pub fn sample_units<R: RngCore + ?Sized>(
    actor: &MlpParams,
    state: &[f64],
    rng: &mut R,
) -> Result<(Vec<f64>, Vec<f64>, f64), AgentError> {
    let (raw, lp) = gaussian_head_sample(actor, state, rng)?;
    let units = raw.iter().map(|u| libm::tanh(*u)).collect();
    Ok((raw, units, lp))
}

/// Squashed distribution mean.
pub fn mean_units(actor: &MlpParams, state: &[f64]) -> Vec<f64> {
    actor.predict(state).map(|m| m.iter().map(|u| libm::tanh(*u)).collect()).unwrap_or_default()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub hidden: Vec<usize>,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip: f64,
    pub actor_optimizer: OptimizerSpec,
    pub critic_optimizer: OptimizerSpec,
    pub update_epochs: usize,
    pub minibatch: usize,
    pub episodes_per_epoch: usize,
    pub reward_scale: f64,
    pub initial_log_std: f64,
    pub min_order_fraction: f64,
    pub normalize_advantages: bool,
    /// Zero disables gradient-norm clipping.
    pub max_grad_norm: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            hidden: alloc::vec![64, 128],
            gamma: 0.99,
            gae_lambda: 0.95,
            clip: 0.2,
            actor_optimizer: OptimizerSpec::adam(3e-4),
            critic_optimizer: OptimizerSpec::adam(1e-3),
            update_epochs: 4,
            minibatch: 64,
            episodes_per_epoch: 3,
            reward_scale: 1e-3,
            initial_log_std: -0.5,
            min_order_fraction: DEFAULT_MIN_ORDER_FRACTION,
            normalize_advantages: true,
            max_grad_norm: 10.0,
        }
    }
}

pub(crate) fn layer_sizes(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut v = Vec::with_capacity(hidden.len() + 2);
    v.push(input);
    v.extend_from_slice(hidden);
    v.push(output);
    v
}

pub(crate) fn new_actor(input: usize, hidden: &[usize], output: usize, log_std: f64, seed: u64) -> Result<MlpParams, AgentError> {
    let mut p = init_network(&layer_sizes(input, hidden, output), Activation::Tanh, OutputHead::Gaussian, seed)?;
    for s in &mut p.log_std {
        *s = log_std;
    }
    Ok(p)
}

pub(crate) fn new_critic(input: usize, hidden: &[usize], seed: u64) -> Result<MlpParams, AgentError> {
    Ok(init_network(&layer_sizes(input, hidden, 1), Activation::Relu, OutputHead::Linear, seed)?)
}

pub(crate) fn clip_grad(g: &mut Gradient, max_norm: f64) {
    if max_norm > 0.0 {
        g.clip_norm(max_norm);
    }
}

/// One global actor and critic over the network-wide observation and action.
#[derive(Debug, Clone)]
pub struct PpoCentral {
    pub config: PpoConfig,
    pub actor: MlpParams,
    pub critic: MlpParams,
    actor_opt: Optimizer,
    critic_opt: Optimizer,
    features: Features,
    space: ActionSpace,
    env: SupplyChainEnv,
    seed: u64,
    rng: ChaCha8Rng,
}

impl PpoCentral {
    pub fn new(scenario: &Scenario, config: PpoConfig, seed: u64) -> Result<Self, AgentError> {
        if config.episodes_per_epoch == 0 || config.minibatch == 0 {
            return Err(AgentError::Config("ppo episodes_per_epoch and minibatch must be positive".into()));
        }
        let features = Features::new(scenario);
        let space = ActionSpace::new(scenario, config.min_order_fraction);
        let actor = new_actor(features.global_len(), &config.hidden, space.dim(), config.initial_log_std, mix_seed(seed, 1, 0))?;
        let critic = new_critic(features.global_len(), &config.hidden, mix_seed(seed, 2, 0))?;
        Ok(PpoCentral {
            actor_opt: Optimizer::new(config.actor_optimizer, &actor),
            critic_opt: Optimizer::new(config.critic_optimizer, &critic),
            actor,
            critic,
            features,
            space,
            env: SupplyChainEnv::new(scenario.clone(), seed)?,
            seed,
            rng: ChaCha8Rng::seed_from_u64(mix_seed(seed, 3, 0)),
            config,
        })
    }

    /// Clipped-surrogate and critic updates over a rollout.
    pub fn update(&mut self, steps: &[Step]) -> Result<SurrogateStats, AgentError> {
        if steps.is_empty() {
            return Err(AgentError::Empty("rollout"));
        }
        let cfg = &self.config;
        let states: Vec<&[f64]> = steps.iter().map(|s| s.state.as_slice()).collect();
        let next: Vec<&[f64]> = steps.iter().map(|s| s.next_state.as_slice()).collect();
        let v = values_of(&self.critic, &states)?;
        let nv = values_of(&self.critic, &next)?;
        let rewards: Vec<f64> = steps.iter().map(|s| s.reward).collect();
        let dones: Vec<bool> = steps.iter().map(|s| s.done).collect();
        let (mut adv, ret) = gae(&rewards, &v, &nv, &dones, cfg.gamma, cfg.gae_lambda);
        if cfg.normalize_advantages {
            normalize(&mut adv);
        }
        let mut order: Vec<usize> = (0..steps.len()).collect();
        let mut last = SurrogateStats::default();
        let in_dim = self.actor.input_size();
        let out_dim = self.actor.output_size();
        for _ in 0..cfg.update_epochs {
            order.shuffle(&mut self.rng);
            for chunk in order.chunks(cfg.minibatch) {
                let sb = batch_from(chunk.iter().map(|&i| steps[i].state.as_slice()), in_dim)?;
                let ab = batch_from(chunk.iter().map(|&i| steps[i].raw_action.as_slice()), out_dim)?;
                let old: Vec<f64> = chunk.iter().map(|&i| steps[i].log_prob).collect();
                let a: Vec<f64> = chunk.iter().map(|&i| adv[i]).collect();
                let y: Vec<f64> = chunk.iter().map(|&i| ret[i]).collect();
                let w = alloc::vec![1.0 / chunk.len() as f64; chunk.len()];
                let (mut g, stats) = surrogate_gradient(&self.actor, &sb, &ab, &old, &a, &w, Some(cfg.clip))?;
                clip_grad(&mut g, cfg.max_grad_norm);
                self.actor_opt.step(&mut self.actor, &g, Direction::Ascend)?;
                let (mut gv, _) = value_gradient(&self.critic, &sb, &y, &w)?;
                clip_grad(&mut gv, cfg.max_grad_norm);
                self.critic_opt.step(&mut self.critic, &gv, Direction::Ascend)?;
                last = stats;
            }
        }
        Ok(last)
    }
}

impl Learner for PpoCentral {
    fn algorithm(&self) -> &'static str {
        "ppo_central"
    }

    fn train_epoch(&mut self, epoch: u64) -> Result<EpisodeSummary, AgentError> {
        let mut steps = Vec::new();
        let mut episodes = Vec::with_capacity(self.config.episodes_per_epoch);
        for e in 0..self.config.episodes_per_epoch {
            let mut obs = self.env.reset(mix_seed(self.seed, epoch, e as u64));
            let mut summary = EpisodeSummary::default();
            while !self.env.is_done() {
                let state = self.features.global(&obs);
                let (raw, units, lp) = sample_units(&self.actor, &state, &mut self.rng)?;
                let action = self.space.decode(&obs, &units);
                let r = self.env.step(&action)?;
                summary.record(&r);
                steps.push(Step {
                    next_state: self.features.global(&r.observation),
                    state,
                    raw_action: raw,
                    reward: r.reward * self.config.reward_scale,
                    log_prob: lp,
                    done: r.done,
                });
                obs = r.observation;
            }
            episodes.push(summary);
        }
        self.update(&steps)?;
        Ok(EpisodeSummary::mean(&episodes))
    }

    fn frozen_action(&self, obs: &Observation) -> Action {
        self.space.decode(obs, &mean_units(&self.actor, &self.features.global(obs)))
    }
}
