//! Cooperative asynchronous actor-critic with a clipped, EMA-smoothed global step.
//!
//! Tier 1 runs one worker per retailer. Every worker owns an environment replica
//! in which all retailers act with the worker's copy of the shared retailer actor
//! and the DCs act with the DC-tier actor; the worker only learns from its own
//! retailer's transitions, rewarded with that retailer's profit. Tier 2 repeats
//! the same mechanics with one worker per DC, rewarded with the profit of the DC
//! and the retailers it serves.
//!
//! One synchronous epoch: zero the accumulators, let every worker collect and
//! compute its local gradients, weight and average them, apply the global step,
//! broadcast. The global step first moves along the aggregated direction and
//! then runs clipped-surrogate passes over the union of the epoch's
//! trajectories, each transition scaled by `w_k / (K·N_k)`; the result is
//! blended into the previous parameters with `tau` and becomes the new
//! old-policy snapshot.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ppo::{batch_from, clip_grad, mean_units, new_actor, new_critic, sample_units, surrogate_gradient, value_gradient, values_of, Step};
use super::{mix_seed, ActionSpace, AgentError, EpisodeSummary, Features, Learner, DEFAULT_MIN_ORDER_FRACTION};
use crate::env::{Action, NodeId, Observation, Scenario, StepResult, SupplyChainEnv};
use crate::nn::{ema_blend, log_prob_gradient, Direction, Gradient, MlpParams, NnError, Optimizer, OptimizerSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct A3cConfig {
    pub actor_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    pub actor_optimizer: OptimizerSpec,
    pub critic_optimizer: OptimizerSpec,
    pub gamma: f64,
    /// `None` disables clipping.
    pub clip: Option<f64>,
    pub tau: f64,
    pub mu1: f64,
    pub mu2: f64,
    pub rho: f64,
    /// Clipped passes after the aggregated step.
    pub ppo_epochs: usize,
    pub minibatch: usize,
    pub episodes_per_epoch: usize,
    /// Retailer workers; worker `k` learns for retailer `k mod C`. Zero means one per retailer.
    pub workers: usize,
    pub dc_tier: bool,
    pub reward_scale: f64,
    pub initial_log_std: f64,
    pub min_order_fraction: f64,
    pub max_grad_norm: f64,
}

impl Default for A3cConfig {
    fn default() -> Self {
        A3cConfig {
            actor_hidden: alloc::vec![64, 128],
            critic_hidden: alloc::vec![64, 128],
            actor_optimizer: OptimizerSpec::adam(5e-5),
            critic_optimizer: OptimizerSpec::adam(1e-4),
            gamma: 0.99,
            clip: Some(0.2),
            tau: 0.05,
            mu1: 0.5,
            mu2: 0.5,
            rho: 0.1,
            ppo_epochs: 4,
            minibatch: 64,
            episodes_per_epoch: 1,
            workers: 0,
            dc_tier: true,
            reward_scale: 0.01,
            initial_log_std: -0.5,
            min_order_fraction: DEFAULT_MIN_ORDER_FRACTION,
            max_grad_norm: 10.0,
        }
    }
}

impl A3cConfig {
    pub fn validate(&self) -> Result<(), AgentError> {
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(AgentError::Config(alloc::format!("a3c tau must lie in (0, 1], got {}", self.tau)));
        }
        if let Some(c) = self.clip {
            if !(c > 0.0 && c < 1.0) {
                return Err(AgentError::Config(alloc::format!("a3c clip must lie in (0, 1), got {c}")));
            }
        }
        if self.minibatch == 0 || self.episodes_per_epoch == 0 {
            return Err(AgentError::Config("a3c minibatch and episodes_per_epoch must be positive".into()));
        }
        if !(self.gamma >= 0.0 && self.gamma <= 1.0) || self.rho < 0.0 {
            return Err(AgentError::Config("a3c gamma must lie in [0, 1] and rho be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Retailer,
    Dc,
}

/// Transitions of one worker's own node, in collection order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub worker: usize,
    pub steps: Vec<Step>,
}

impl Trajectory {
    pub fn mean_reward(&self) -> f64 {
        if self.steps.is_empty() {
            0.0
        } else {
            self.steps.iter().map(|s| s.reward).sum::<f64>() / self.steps.len() as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalGradients {
    /// Ascent direction of `mean_t log π(v_t|u_t)·A_t`.
    pub actor: Gradient,
    /// `mean_t δ_t ∇G(u_t)`.
    pub critic: Gradient,
    pub mean_advantage: f64,
    pub mean_td_error: f64,
}

/// `r + γ·G(u') − G(u)`, without the bootstrap on terminal transitions.
pub fn advantage_value(reward: f64, gamma: f64, value: f64, next_value: f64, done: bool) -> f64 {
    if done {
        reward - value
    } else {
        reward + gamma * next_value - value
    }
}

/// `μ1·e^(−ρ(t − t_k)) + μ2·r_k / Σr`; the share falls back to `1/K` when `Σr ≤ 0`.
pub fn importance_weight(mu1: f64, mu2: f64, rho: f64, now: u64, t_k: u64, rewards: &[f64], k: usize) -> f64 {
    let stale = now.saturating_sub(t_k) as f64;
    let total: f64 = rewards.iter().sum();
    let share = if total > 0.0 { rewards[k] / total } else { 1.0 / rewards.len().max(1) as f64 };
    mu1 * libm::exp(-rho * stale) + mu2 * share
}

/// `(1/K)·Σ w_k·g_k` over the successful workers, separately for actor and critic.
pub fn aggregate(
    contributions: &[(&LocalGradients, f64)],
    configured_workers: usize,
) -> Result<(Gradient, Gradient), AgentError> {
    let first = contributions.first().ok_or(AgentError::Empty("successful workers"))?;
    let mut da = first.0.actor.clone();
    let mut dc = first.0.critic.clone();
    for g in da.values_mut().chain(dc.values_mut()) {
        *g = 0.0;
    }
    let inv_k = 1.0 / configured_workers.max(1) as f64;
    for (g, w) in contributions {
        da.add_scaled(&g.actor, w * inv_k)?;
        dc.add_scaled(&g.critic, w * inv_k)?;
    }
    Ok((da, dc))
}

/// A worker: private parameters, environment replica and random stream.
#[derive(Debug, Clone)]
pub struct LocalAgent {
    pub id: usize,
    pub role: Role,
    /// Retailer or DC index this worker learns for.
    pub node: usize,
    pub actor: MlpParams,
    pub critic: MlpParams,
    pub last_sync: u64,
    pub mean_reward: f64,
    pub gamma: f64,
    pub reward_scale: f64,
    env: SupplyChainEnv,
    obs: Observation,
    rng: ChaCha8Rng,
    seed: u64,
    episode_index: u64,
    current: EpisodeSummary,
    /// Episodes completed since the last [`LocalAgent::take_finished`].
    finished: Vec<EpisodeSummary>,
    features: Features,
    space: ActionSpace,
}

impl LocalAgent {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        id: usize,
        role: Role,
        node: usize,
        scenario: &Scenario,
        actor: MlpParams,
        critic: MlpParams,
        config: &A3cConfig,
        seed: u64,
    ) -> Result<Self, AgentError> {
        let mut env = SupplyChainEnv::new(scenario.clone(), seed)?;
        let obs = env.reset(mix_seed(seed, 0, 0xE9));
        Ok(LocalAgent {
            id,
            role,
            node,
            actor,
            critic,
            last_sync: 0,
            mean_reward: 0.0,
            gamma: config.gamma,
            reward_scale: config.reward_scale,
            env,
            obs,
            rng: ChaCha8Rng::seed_from_u64(mix_seed(seed, 1, 0xE9)),
            seed,
            episode_index: 1,
            current: EpisodeSummary::default(),
            finished: Vec::new(),
            features: Features::new(scenario),
            space: ActionSpace::new(scenario, config.min_order_fraction),
        })
    }

    fn own_state(&self, obs: &Observation) -> Vec<f64> {
        match self.role {
            Role::Retailer => self.features.retailer(obs, self.node),
            Role::Dc => self.features.dc(obs, self.node),
        }
    }

    fn own_reward(&self, r: &StepResult) -> f64 {
        let s = self.env.scenario();
        match self.role {
            Role::Retailer => r.node_profit(s.node_index(NodeId::Retailer(self.node))),
            Role::Dc => {
                let mut z = r.node_profit(s.node_index(NodeId::Dc(self.node)));
                for c in s.retailers_of(self.node) {
                    z += r.node_profit(s.node_index(NodeId::Retailer(c)));
                }
                z
            }
        }
    }

    pub fn take_finished(&mut self) -> Vec<EpisodeSummary> {
        core::mem::take(&mut self.finished)
    }

    /// `n_steps` transitions of this worker's node. `peer` drives the other tier;
    /// `None` leaves those nodes without orders.
    pub fn local_collect(&mut self, n_steps: usize, peer: Option<&MlpParams>) -> Result<Trajectory, AgentError> {
        let mut steps = Vec::with_capacity(n_steps);
        let np = self.space.products();
        let (n_dc, n_ret) = (self.space.dc_capacity.len(), self.space.retailer_capacity.len());
        for _ in 0..n_steps {
            if self.env.is_done() {
                self.obs = self.env.reset(mix_seed(self.seed, self.episode_index, 0xE9));
                self.episode_index += 1;
            }
            let obs = &self.obs;
            let mut action = Action::zeros(n_dc, n_ret, np);
            let mut own = None;
            for c in 0..n_ret {
                let actor = if self.role == Role::Retailer { Some(&self.actor) } else { peer };
                if let Some(actor) = actor {
                    let st = self.features.retailer(obs, c);
                    let (raw, units, lp) = sample_units(actor, &st, &mut self.rng)?;
                    self.space.decode_node(obs, NodeId::Retailer(c), &units, &mut action);
                    if self.role == Role::Retailer && c == self.node {
                        own = Some((st, raw, lp));
                    }
                }
            }
            for k in 0..n_dc {
                let actor = if self.role == Role::Dc { Some(&self.actor) } else { peer };
                if let Some(actor) = actor {
                    let st = self.features.dc(obs, k);
                    let (raw, units, lp) = sample_units(actor, &st, &mut self.rng)?;
                    self.space.decode_node(obs, NodeId::Dc(k), &units, &mut action);
                    if self.role == Role::Dc && k == self.node {
                        own = Some((st, raw, lp));
                    }
                }
            }
            let (state, raw_action, log_prob) = own.ok_or(AgentError::Config("worker node out of range".into()))?;
            let r = self.env.step(&action)?;
            self.current.record(&r);
            let reward = self.own_reward(&r) * self.reward_scale;
            steps.push(Step { state, raw_action, reward, next_state: self.own_state(&r.observation), log_prob, done: r.done });
            if r.done {
                self.finished.push(core::mem::take(&mut self.current));
            }
            self.obs = r.observation;
        }
        let t = Trajectory { worker: self.id, steps };
        self.mean_reward = t.mean_reward();
        Ok(t)
    }

    pub fn advantage(&self, step: &Step) -> Result<f64, AgentError> {
        let v = self.critic.predict(&step.state)?[0];
        let nv = self.critic.predict(&step.next_state)?[0];
        Ok(advantage_value(step.reward, self.gamma, v, nv, step.done))
    }

    pub fn local_gradients(&self, traj: &Trajectory) -> Result<LocalGradients, AgentError> {
        local_gradients(&self.actor, &self.critic, self.gamma, traj)
    }
}

/// Actor and critic gradients of one trajectory under the given parameters.
pub fn local_gradients(
    actor: &MlpParams,
    critic: &MlpParams,
    gamma: f64,
    traj: &Trajectory,
) -> Result<LocalGradients, AgentError> {
    let n = traj.steps.len();
    if n == 0 {
        return Err(AgentError::Empty("trajectory"));
    }
    let states: Vec<&[f64]> = traj.steps.iter().map(|s| s.state.as_slice()).collect();
    let next: Vec<&[f64]> = traj.steps.iter().map(|s| s.next_state.as_slice()).collect();
    let v = values_of(critic, &states)?;
    let nv = values_of(critic, &next)?;
    let adv: Vec<f64> = (0..n)
        .map(|t| advantage_value(traj.steps[t].reward, gamma, v[t], nv[t], traj.steps[t].done))
        .collect();
    let inv = 1.0 / n as f64;
    let sb = batch_from(states.iter().copied(), actor.input_size())?;
    let ab = batch_from(traj.steps.iter().map(|s| s.raw_action.as_slice()), actor.output_size())?;
    let coefs: Vec<f64> = adv.iter().map(|a| a * inv).collect();
    let (ga, _) = log_prob_gradient(actor, &sb, &ab, &coefs)?;
    let targets: Vec<f64> = (0..n).map(|t| adv[t] + v[t]).collect();
    let (gc, _) = value_gradient(critic, &sb, &targets, &alloc::vec![inv; n])?;
    if !ga.is_finite() || !gc.is_finite() {
        return Err(AgentError::NonFinite("local gradient"));
    }
    let mean_adv = adv.iter().sum::<f64>() * inv;
    Ok(LocalGradients { actor: ga, critic: gc, mean_advantage: mean_adv, mean_td_error: mean_adv })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateReport {
    pub mean_ratio: f64,
    pub clipped_fraction: f64,
    pub critic_loss: f64,
    pub rolled_back: bool,
}

/// Owner of the global parameters of one tier.
#[derive(Debug, Clone)]
pub struct GlobalCoordinator {
    pub actor: MlpParams,
    pub critic: MlpParams,
    pub old_actor: MlpParams,
    pub acc_actor: Gradient,
    pub acc_critic: Gradient,
    actor_opt: Optimizer,
    critic_opt: Optimizer,
    pub clip: Option<f64>,
    pub gamma: f64,
    pub tau: f64,
    pub mu1: f64,
    pub mu2: f64,
    pub rho: f64,
    pub workers: usize,
    pub ppo_epochs: usize,
    pub minibatch: usize,
    pub max_grad_norm: f64,
    /// Completed global updates.
    pub updates: u64,
    rng: ChaCha8Rng,
}

fn is_numeric_failure(e: &AgentError) -> bool {
    matches!(e, AgentError::NonFinite(_) | AgentError::Nn(NnError::NonFinite(_)))
}

impl GlobalCoordinator {
    pub fn new(actor: MlpParams, critic: MlpParams, config: &A3cConfig, workers: usize, seed: u64) -> Self {
        GlobalCoordinator {
            old_actor: actor.clone(),
            acc_actor: Gradient::zeros_like(&actor),
            acc_critic: Gradient::zeros_like(&critic),
            actor_opt: Optimizer::new(config.actor_optimizer, &actor),
            critic_opt: Optimizer::new(config.critic_optimizer, &critic),
            actor,
            critic,
            clip: config.clip,
            gamma: config.gamma,
            tau: config.tau,
            mu1: config.mu1,
            mu2: config.mu2,
            rho: config.rho,
            workers,
            ppo_epochs: config.ppo_epochs,
            minibatch: config.minibatch,
            max_grad_norm: config.max_grad_norm,
            updates: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Zeroes the accumulators.
    pub fn begin_epoch(&mut self) {
        self.acc_actor = Gradient::zeros_like(&self.actor);
        self.acc_critic = Gradient::zeros_like(&self.critic);
    }

    pub fn weight(&self, k: usize, t_k: u64, rewards: &[f64]) -> f64 {
        importance_weight(self.mu1, self.mu2, self.rho, self.updates, t_k, rewards, k)
    }

    pub fn accumulate(&mut self, contributions: &[(&LocalGradients, f64)]) -> Result<(), AgentError> {
        let (a, c) = aggregate(contributions, self.workers)?;
        self.acc_actor.add_scaled(&a, 1.0)?;
        self.acc_critic.add_scaled(&c, 1.0)?;
        Ok(())
    }

    /// Applies the epoch's update; on a numeric failure the parameters are left untouched.
    pub fn global_update(&mut self, batches: &[(&Trajectory, f64)]) -> Result<UpdateReport, AgentError> {
        match self.try_update(batches) {
            Ok((actor, critic, report)) => {
                self.actor = actor;
                self.critic = critic;
                self.old_actor = self.actor.clone();
                self.updates += 1;
                Ok(report)
            }
            Err(e) if is_numeric_failure(&e) => {
                self.old_actor = self.actor.clone();
                Ok(UpdateReport { rolled_back: true, ..Default::default() })
            }
            Err(e) => Err(e),
        }
    }

    fn try_update(&mut self, batches: &[(&Trajectory, f64)]) -> Result<(MlpParams, MlpParams, UpdateReport), AgentError> {
        let mut actor = self.actor.clone();
        let mut critic = self.critic.clone();
        let mut report = UpdateReport { mean_ratio: 1.0, ..Default::default() };
        let mut ga = self.acc_actor.clone();
        let mut gc = self.acc_critic.clone();
        clip_grad(&mut ga, self.max_grad_norm);
        clip_grad(&mut gc, self.max_grad_norm);
        self.actor_opt.step(&mut actor, &ga, Direction::Ascend)?;
        self.critic_opt.step(&mut critic, &gc, Direction::Ascend)?;

        // union of trajectories with per-transition weights and fixed targets
        let mut rows: Vec<(&Step, f64, f64, f64)> = Vec::new();
        let k = self.workers.max(1) as f64;
        for (traj, w) in batches {
            let n = traj.steps.len();
            if n == 0 {
                continue;
            }
            let states: Vec<&[f64]> = traj.steps.iter().map(|s| s.state.as_slice()).collect();
            let next: Vec<&[f64]> = traj.steps.iter().map(|s| s.next_state.as_slice()).collect();
            let v = values_of(&self.critic, &states)?;
            let nv = values_of(&self.critic, &next)?;
            for (t, s) in traj.steps.iter().enumerate() {
                let a = advantage_value(s.reward, self.gamma, v[t], nv[t], s.done);
                rows.push((s, w / (k * n as f64), a, a + v[t]));
            }
        }
        if self.ppo_epochs > 0 && !rows.is_empty() {
            let total = rows.len() as f64;
            let mut order: Vec<usize> = (0..rows.len()).collect();
            let mut ratio_sum = 0.0;
            let mut clipped = 0usize;
            let mut seen = 0usize;
            for _ in 0..self.ppo_epochs {
                order.shuffle(&mut self.rng);
                for chunk in order.chunks(self.minibatch) {
                    let scale = total / chunk.len() as f64;
                    let sb = batch_from(chunk.iter().map(|&i| rows[i].0.state.as_slice()), actor.input_size())?;
                    let ab = batch_from(chunk.iter().map(|&i| rows[i].0.raw_action.as_slice()), actor.output_size())?;
                    let old: Vec<f64> = chunk.iter().map(|&i| rows[i].0.log_prob).collect();
                    let adv: Vec<f64> = chunk.iter().map(|&i| rows[i].2).collect();
                    let y: Vec<f64> = chunk.iter().map(|&i| rows[i].3).collect();
                    let w: Vec<f64> = chunk.iter().map(|&i| rows[i].1 * scale).collect();
                    let (mut g, stats) = surrogate_gradient(&actor, &sb, &ab, &old, &adv, &w, self.clip)?;
                    clip_grad(&mut g, self.max_grad_norm);
                    self.actor_opt.step(&mut actor, &g, Direction::Ascend)?;
                    let (mut gv, loss) = value_gradient(&critic, &sb, &y, &w)?;
                    clip_grad(&mut gv, self.max_grad_norm);
                    self.critic_opt.step(&mut critic, &gv, Direction::Ascend)?;
                    ratio_sum += stats.mean_ratio * chunk.len() as f64;
                    clipped += stats.clipped;
                    seen += chunk.len();
                    report.critic_loss = loss;
                }
            }
            report.mean_ratio = ratio_sum / seen as f64;
            report.clipped_fraction = clipped as f64 / seen as f64;
        }
        let actor = ema_blend(&self.actor, &actor, self.tau)?;
        let critic = ema_blend(&self.critic, &critic, self.tau)?;
        if !actor.values().chain(critic.values()).all(|v| v.is_finite()) {
            return Err(AgentError::NonFinite("global parameters"));
        }
        Ok((actor, critic, report))
    }

    /// Copies the global parameters into every agent and stamps their sync time.
    pub fn broadcast(&self, agents: &mut [LocalAgent]) {
        for a in agents {
            self.sync(a);
        }
    }

    pub fn sync(&self, agent: &mut LocalAgent) {
        agent.actor.clone_from(&self.actor);
        agent.critic.clone_from(&self.critic);
        agent.last_sync = self.updates;
    }

    /// Asynchronous path: applies one worker's submission on its own.
    pub fn apply_submission(
        &mut self,
        k: usize,
        t_k: u64,
        rewards: &[f64],
        traj: &Trajectory,
        grads: &LocalGradients,
    ) -> Result<(UpdateReport, f64), AgentError> {
        self.begin_epoch();
        let w = self.weight(k, t_k, rewards);
        self.accumulate(&[(grads, w)])?;
        let r = self.global_update(&[(traj, w)])?;
        Ok((r, w))
    }
}

/// Runs local collection and gradient computation for a set of workers.
pub trait Executor {
    fn collect(
        &mut self,
        workers: &mut [LocalAgent],
        n_steps: usize,
        peer: Option<&MlpParams>,
    ) -> Vec<Result<(Trajectory, LocalGradients), AgentError>>;
}

/// Workers one after another, in index order.
#[derive(Debug, Clone, Copy, Default)]
pub struct SequentialExecutor;

pub fn collect_one(
    worker: &mut LocalAgent,
    n_steps: usize,
    peer: Option<&MlpParams>,
) -> Result<(Trajectory, LocalGradients), AgentError> {
    let t = worker.local_collect(n_steps, peer)?;
    let g = worker.local_gradients(&t)?;
    Ok((t, g))
}

impl Executor for SequentialExecutor {
    fn collect(
        &mut self,
        workers: &mut [LocalAgent],
        n_steps: usize,
        peer: Option<&MlpParams>,
    ) -> Vec<Result<(Trajectory, LocalGradients), AgentError>> {
        workers.iter_mut().map(|w| collect_one(w, n_steps, peer)).collect()
    }
}

/// A coordinator and its workers.
#[derive(Debug, Clone)]
pub struct Tier {
    pub role: Role,
    pub coordinator: GlobalCoordinator,
    pub workers: Vec<LocalAgent>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TierReport {
    pub update: UpdateReport,
    pub weights: Vec<f64>,
    pub failed_workers: usize,
    pub skipped: bool,
}

impl Tier {
    /// Weighting, aggregation, global step and broadcast for one epoch's results.
    pub fn finish_epoch(
        &mut self,
        results: Vec<Result<(Trajectory, LocalGradients), AgentError>>,
    ) -> Result<TierReport, AgentError> {
        let mut report = TierReport::default();
        let rewards: Vec<f64> = self
            .workers
            .iter()
            .zip(&results)
            .map(|(w, r)| if r.is_ok() { w.mean_reward } else { 0.0 })
            .collect();
        let mut ok: Vec<(usize, Trajectory, LocalGradients)> = Vec::new();
        for (k, r) in results.into_iter().enumerate() {
            match r {
                Ok((t, g)) => ok.push((k, t, g)),
                Err(e) if is_numeric_failure(&e) => report.failed_workers += 1,
                Err(e) => return Err(e),
            }
        }
        if ok.is_empty() {
            report.skipped = true;
            return Ok(report);
        }
        let weights: Vec<f64> =
            ok.iter().map(|(k, _, _)| self.coordinator.weight(*k, self.workers[*k].last_sync, &rewards)).collect();
        let contributions: Vec<(&LocalGradients, f64)> = ok.iter().zip(&weights).map(|((_, _, g), w)| (g, *w)).collect();
        self.coordinator.accumulate(&contributions)?;
        let batches: Vec<(&Trajectory, f64)> = ok.iter().zip(&weights).map(|((_, t, _), w)| (t, *w)).collect();
        report.update = self.coordinator.global_update(&batches)?;
        report.weights = weights;
        self.coordinator.broadcast(&mut self.workers);
        Ok(report)
    }
}

/// The full two-tier trainer.
#[derive(Debug, Clone)]
pub struct A3cTrainer {
    pub config: A3cConfig,
    pub retail: Tier,
    pub dc: Option<Tier>,
    pub epoch: u64,
    pub last_reports: Vec<TierReport>,
    features: Features,
    space: ActionSpace,
    horizon: usize,
}

impl A3cTrainer {
    pub fn new(scenario: &Scenario, config: A3cConfig, seed: u64) -> Result<Self, AgentError> {
        config.validate()?;
        let features = Features::new(scenario);
        let space = ActionSpace::new(scenario, config.min_order_fraction);
        let np = scenario.product_count();
        let n_ret = scenario.retailers.len();
        if n_ret == 0 {
            return Err(AgentError::Config("a3c needs at least one retailer".into()));
        }
        let k = if config.workers == 0 { n_ret } else { config.workers };
        let ra = new_actor(features.retailer_len(), &config.actor_hidden, np, config.initial_log_std, mix_seed(seed, 10, 0))?;
        let rc = new_critic(features.retailer_len(), &config.critic_hidden, mix_seed(seed, 11, 0))?;
        let workers = (0..k)
            .map(|i| LocalAgent::new(i, Role::Retailer, i % n_ret, scenario, ra.clone(), rc.clone(), &config, mix_seed(seed, 100, i as u64)))
            .collect::<Result<Vec<_>, _>>()?;
        let retail = Tier { role: Role::Retailer, coordinator: GlobalCoordinator::new(ra, rc, &config, k, mix_seed(seed, 12, 0)), workers };
        let dc = if config.dc_tier && !scenario.dcs.is_empty() {
            let da = new_actor(features.dc_len(), &config.actor_hidden, np, config.initial_log_std, mix_seed(seed, 20, 0))?;
            let dcrit = new_critic(features.dc_len(), &config.critic_hidden, mix_seed(seed, 21, 0))?;
            let nd = scenario.dcs.len();
            let workers = (0..nd)
                .map(|j| LocalAgent::new(j, Role::Dc, j, scenario, da.clone(), dcrit.clone(), &config, mix_seed(seed, 200, j as u64)))
                .collect::<Result<Vec<_>, _>>()?;
            Some(Tier { role: Role::Dc, coordinator: GlobalCoordinator::new(da, dcrit, &config, nd, mix_seed(seed, 22, 0)), workers })
        } else {
            None
        };
        Ok(A3cTrainer {
            horizon: scenario.settings.horizon as usize,
            config,
            retail,
            dc,
            epoch: 0,
            last_reports: Vec::new(),
            features,
            space,
        })
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.horizon * self.config.episodes_per_epoch
    }

    /// Zeroes both tiers' accumulators and returns the actors every replica acts with
    /// this epoch: `(retailer, dc)`.
    pub fn begin_epoch(&mut self) -> (MlpParams, Option<MlpParams>) {
        self.retail.coordinator.begin_epoch();
        if let Some(d) = &mut self.dc {
            d.coordinator.begin_epoch();
        }
        (self.retail.coordinator.actor.clone(), self.dc.as_ref().map(|d| d.coordinator.actor.clone()))
    }

    /// DC-tier collection and update against a retailer actor snapshot.
    pub fn dc_epoch(&mut self, executor: &mut dyn Executor, retail_actor: &MlpParams) -> Result<Option<TierReport>, AgentError> {
        let n = self.steps_per_epoch();
        match &mut self.dc {
            Some(d) => {
                let res = executor.collect(&mut d.workers, n, Some(retail_actor));
                Ok(Some(d.finish_epoch(res)?))
            }
            None => Ok(None),
        }
    }

    /// Records the tier reports and returns the mean of the finished episodes.
    pub fn end_epoch(&mut self, retail: TierReport, dc: Option<TierReport>) -> EpisodeSummary {
        self.last_reports = core::iter::once(retail).chain(dc).collect();
        self.epoch += 1;
        EpisodeSummary::mean(&self.take_finished())
    }

    /// One synchronous epoch through `executor`.
    pub fn train_epoch_with(&mut self, executor: &mut dyn Executor) -> Result<EpisodeSummary, AgentError> {
        let n = self.steps_per_epoch();
        let (retail_actor, dc_actor) = self.begin_epoch();
        let retail_results = executor.collect(&mut self.retail.workers, n, dc_actor.as_ref());
        let r = self.retail.finish_epoch(retail_results)?;
        let d = self.dc_epoch(executor, &retail_actor)?;
        Ok(self.end_epoch(r, d))
    }

    /// Episodes completed by all workers since the last call.
    pub fn take_finished(&mut self) -> Vec<EpisodeSummary> {
        let mut out = Vec::new();
        for w in &mut self.retail.workers {
            out.extend(w.take_finished());
        }
        if let Some(d) = &mut self.dc {
            for w in &mut d.workers {
                out.extend(w.take_finished());
            }
        }
        out
    }

    /// Deterministic action from the global actors.
    pub fn global_action(&self, obs: &Observation) -> Action {
        let np = self.space.products();
        let mut a = Action::zeros(obs.dcs.len(), obs.retailers.len(), np);
        for c in 0..obs.retailers.len() {
            let u = mean_units(&self.retail.coordinator.actor, &self.features.retailer(obs, c));
            self.space.decode_node(obs, NodeId::Retailer(c), &u, &mut a);
        }
        if let Some(d) = &self.dc {
            for k in 0..obs.dcs.len() {
                let u = mean_units(&d.coordinator.actor, &self.features.dc(obs, k));
                self.space.decode_node(obs, NodeId::Dc(k), &u, &mut a);
            }
        }
        a
    }
}

impl Learner for A3cTrainer {
    fn algorithm(&self) -> &'static str {
        "a3c_dppo"
    }

    fn train_epoch(&mut self, _epoch: u64) -> Result<EpisodeSummary, AgentError> {
        self.train_epoch_with(&mut SequentialExecutor)
    }

    fn frozen_action(&self, obs: &Observation) -> Action {
        self.global_action(obs)
    }
}
