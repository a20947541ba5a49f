//! Deep Q-network with one discrete head per (node, product).
//!
//! The trunk is shared and the output layer holds `dims × grid_points` values.
//! Head `d` scores grid cells `{0, 0.1·q_cap, …, q_cap}` of its own order
//! quantity; every head bootstraps from its own maximum under the target
//! network and shares the network reward.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ppo::{batch_from, clip_grad, layer_sizes};
use super::{mix_seed, ActionSpace, AgentError, EpisodeSummary, Features, Learner, ReplayBuffer, Transition};
use crate::env::{Action, Observation, Scenario, SupplyChainEnv};
use crate::nn::{backward, forward, init_network, Activation, Batch, Direction, MlpParams, Optimizer, OptimizerSpec, OutputHead};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DqnConfig {
    pub hidden: Vec<usize>,
    pub grid_points: usize,
    pub gamma: f64,
    pub optimizer: OptimizerSpec,
    pub replay_capacity: usize,
    pub batch_size: usize,
    pub target_sync: u64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Share of the planned training steps over which ε decays linearly.
    pub epsilon_fraction: f64,
    pub reward_scale: f64,
    pub min_order_fraction: f64,
    pub max_grad_norm: f64,
}

impl Default for DqnConfig {
    fn default() -> Self {
        DqnConfig {
            hidden: alloc::vec![64, 128],
            grid_points: 11,
            gamma: 0.99,
            optimizer: OptimizerSpec::adam(1e-3),
            replay_capacity: 100_000,
            batch_size: 64,
            target_sync: 500,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_fraction: 0.5,
            reward_scale: 1e-3,
            min_order_fraction: super::DEFAULT_MIN_ORDER_FRACTION,
            max_grad_norm: 10.0,
        }
    }
}

/// `z + γ·max_next`, or `z` alone on terminal transitions.
pub fn td_target(reward: f64, gamma: f64, max_next: f64, done: bool) -> f64 {
    if done {
        reward
    } else {
        reward + gamma * max_next
    }
}

/// Linear decay from `start` to `end` over `decay_steps`, then flat.
pub fn linear_epsilon(start: f64, end: f64, decay_steps: u64, step: u64) -> f64 {
    if decay_steps == 0 || step >= decay_steps {
        end
    } else {
        start + (end - start) * step as f64 / decay_steps as f64
    }
}

/// Index of the first maximum.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone)]
pub struct DqnAgent {
    pub config: DqnConfig,
    pub q: MlpParams,
    pub target: MlpParams,
    optimizer: Optimizer,
    pub buffer: ReplayBuffer<Transition>,
    features: Features,
    space: ActionSpace,
    env: SupplyChainEnv,
    seed: u64,
    rng: ChaCha8Rng,
    /// Environment steps taken while training.
    pub steps: u64,
    pub train_steps: u64,
    decay_steps: u64,
    /// When set, replaces the schedule.
    pub epsilon_override: Option<f64>,
}

impl DqnAgent {
    /// `planned_steps` sizes the ε schedule.
    pub fn new(scenario: &Scenario, config: DqnConfig, planned_steps: u64, seed: u64) -> Result<Self, AgentError> {
        if config.grid_points < 2 || config.batch_size == 0 || config.target_sync == 0 {
            return Err(AgentError::Config("dqn grid_points ≥ 2, batch_size and target_sync > 0".into()));
        }
        if !(0.0..=1.0).contains(&config.epsilon_start) || !(0.0..=1.0).contains(&config.epsilon_end) {
            return Err(AgentError::Config("dqn epsilon must lie in [0, 1]".into()));
        }
        let features = Features::new(scenario);
        let space = ActionSpace::new(scenario, config.min_order_fraction);
        let sizes = layer_sizes(features.global_len(), &config.hidden, space.dim() * config.grid_points);
        let q = init_network(&sizes, Activation::Relu, OutputHead::Linear, mix_seed(seed, 1, 0))?;
        Ok(DqnAgent {
            optimizer: Optimizer::new(config.optimizer, &q),
            target: q.clone(),
            q,
            buffer: ReplayBuffer::new(config.replay_capacity),
            features,
            space,
            env: SupplyChainEnv::new(scenario.clone(), seed)?,
            seed,
            rng: ChaCha8Rng::seed_from_u64(mix_seed(seed, 3, 0)),
            steps: 0,
            train_steps: 0,
            decay_steps: (planned_steps as f64 * config.epsilon_fraction) as u64,
            epsilon_override: None,
            config,
        })
    }

    pub fn dims(&self) -> usize {
        self.space.dim()
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon_override.unwrap_or_else(|| {
            linear_epsilon(self.config.epsilon_start, self.config.epsilon_end, self.decay_steps, self.steps)
        })
    }

    pub fn greedy_cells(&self, state: &[f64]) -> Vec<usize> {
        let g = self.config.grid_points;
        match self.q.predict(state) {
            Ok(out) => out.chunks(g).map(argmax).collect(),
            Err(_) => alloc::vec![0; self.dims()],
        }
    }

    /// ε-greedy cell per head.
    pub fn choose_cells<R: Rng + ?Sized>(&self, state: &[f64], epsilon: f64, rng: &mut R) -> Vec<usize> {
        if epsilon > 0.0 && rng.random::<f64>() < epsilon {
            (0..self.dims()).map(|_| rng.random_range(0..self.config.grid_points)).collect()
        } else {
            self.greedy_cells(state)
        }
    }

    pub fn decode(&self, obs: &Observation, cells: &[usize]) -> Action {
        let np = self.space.products();
        let mut a = Action::zeros(self.space.dc_capacity.len(), self.space.retailer_capacity.len(), np);
        let nodes: Vec<_> = self.space.nodes().collect();
        for (i, node) in nodes.into_iter().enumerate() {
            let row = a.node_mut(node);
            for p in 0..np {
                row[p] = self.space.grid_quantity(obs, node, p, cells[i * np + p], self.config.grid_points);
            }
        }
        a
    }

    pub fn sync_target(&mut self) {
        self.target = self.q.clone();
    }

    /// Per-head TD targets of one batch under the target network.
    pub fn targets(&self, batch: &[&Transition]) -> Result<Vec<f64>, AgentError> {
        let g = self.config.grid_points;
        let d = self.dims();
        let next = batch_from(batch.iter().map(|t| t.next_state.as_slice()), self.q.input_size())?;
        let (qn, _) = forward(&self.target, &next)?;
        let mut out = Vec::with_capacity(batch.len() * d);
        for (r, t) in batch.iter().enumerate() {
            let row = qn.row(r);
            for h in 0..d {
                let m = row[h * g..(h + 1) * g].iter().copied().fold(f64::NEG_INFINITY, f64::max);
                out.push(td_target(t.reward, self.config.gamma, m, t.done));
            }
        }
        Ok(out)
    }

    /// One gradient step on the mean squared TD error; returns that error.
    pub fn train_step(&mut self, batch: &[&Transition]) -> Result<f64, AgentError> {
        if batch.is_empty() {
            return Err(AgentError::Empty("dqn batch"));
        }
        let g = self.config.grid_points;
        let d = self.dims();
        let y = self.targets(batch)?;
        let states = batch_from(batch.iter().map(|t| t.state.as_slice()), self.q.input_size())?;
        let (q, cache) = forward(&self.q, &states)?;
        let mut up = Batch::zeros(batch.len(), d * g);
        let scale = 1.0 / (batch.len() * d) as f64;
        let mut loss = 0.0;
        for (r, t) in batch.iter().enumerate() {
            for h in 0..d {
                let cell = t.action[h] as usize;
                let idx = h * g + cell;
                let diff = q.row(r)[idx] - y[r * d + h];
                loss += diff * diff * scale;
                up.row_mut(r)[idx] = diff * scale;
            }
        }
        if !loss.is_finite() {
            return Err(AgentError::NonFinite("dqn loss"));
        }
        let mut grad = backward(&self.q, &cache, &up)?;
        clip_grad(&mut grad, self.config.max_grad_norm);
        self.optimizer.step(&mut self.q, &grad, Direction::Descend)?;
        self.train_steps += 1;
        Ok(loss)
    }
}

impl Learner for DqnAgent {
    fn algorithm(&self) -> &'static str {
        "dqn"
    }

    fn train_epoch(&mut self, epoch: u64) -> Result<EpisodeSummary, AgentError> {
        let mut obs = self.env.reset(mix_seed(self.seed, epoch, 0));
        let mut summary = EpisodeSummary::default();
        let mut state = self.features.global(&obs);
        while !self.env.is_done() {
            let eps = self.epsilon();
            let explore = eps > 0.0 && self.rng.random::<f64>() < eps;
            let cells: Vec<usize> = if explore {
                (0..self.dims()).map(|_| self.rng.random_range(0..self.config.grid_points)).collect()
            } else {
                self.greedy_cells(&state)
            };
            let action = self.decode(&obs, &cells);
            let r = self.env.step(&action)?;
            summary.record(&r);
            let next = self.features.global(&r.observation);
            self.buffer.push(Transition {
                state: core::mem::take(&mut state),
                action: cells.iter().map(|&c| c as f64).collect(),
                reward: r.reward * self.config.reward_scale,
                next_state: next.clone(),
                done: r.done,
            });
            self.steps += 1;
            if let Some(batch) = self.buffer.sample(self.config.batch_size, &mut self.rng) {
                let owned: Vec<Transition> = batch.into_iter().cloned().collect();
                let refs: Vec<&Transition> = owned.iter().collect();
                self.train_step(&refs)?;
            }
            if self.steps.is_multiple_of(self.config.target_sync) {
                self.sync_target();
            }
            state = next;
            obs = r.observation;
        }
        Ok(summary)
    }

    fn frozen_action(&self, obs: &Observation) -> Action {
        self.decode(obs, &self.greedy_cells(&self.features.global(obs)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::MlpParams;
    use crate::scenarios::paper_default;

    fn agent() -> DqnAgent {
        DqnAgent::new(&paper_default(), DqnConfig::default(), 1000, 9).unwrap()
    }

    #[test]
    fn td_arithmetic() {
        assert!((td_target(5.0, 0.9, 10.0, false) - 14.0).abs() < 1e-12);
        assert_eq!(td_target(5.0, 0.9, 10.0, true), 5.0);
    }

    #[test]
    fn epsilon_schedule() {
        assert_eq!(linear_epsilon(1.0, 0.05, 100, 0), 1.0);
        assert!((linear_epsilon(1.0, 0.05, 100, 50) - 0.525).abs() < 1e-12);
        assert_eq!(linear_epsilon(1.0, 0.05, 100, 100), 0.05);
        assert_eq!(linear_epsilon(1.0, 0.05, 100, 1000), 0.05);
    }

    #[test]
    fn greedy_choice_and_ties() {
        let mut a = agent();
        let obs = a.env.observe();
        let state = a.features.global(&obs);
        let sizes = a.q.layer_sizes.clone();
        a.q = MlpParams::zeros(&sizes, Activation::Relu, OutputHead::Linear).unwrap();
        assert!(a.greedy_cells(&state).iter().all(|&c| c == 0));
        let g = a.config.grid_points;
        let last = a.q.layers.len() - 1;
        for h in 0..a.dims() {
            a.q.layers[last].biases[h * g + 3] = 1.0;
        }
        assert!(a.greedy_cells(&state).iter().all(|&c| c == 3));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let random = a.choose_cells(&state, 1.0, &mut rng);
        assert!(random.iter().any(|&c| c != 3));
    }

    #[test]
    fn fixed_point_has_zero_loss() {
        let mut a = agent();
        let sizes = a.q.layer_sizes.clone();
        a.q = MlpParams::zeros(&sizes, Activation::Relu, OutputHead::Linear).unwrap();
        a.sync_target();
        let obs = a.env.observe();
        let s = a.features.global(&obs);
        let t = Transition { state: s.clone(), action: alloc::vec![0.0; a.dims()], reward: 0.0, next_state: s, done: false };
        let before = a.q.clone();
        let loss = a.train_step(&[&t]).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(before, a.q);
    }

    #[test]
    fn targets_ignore_online_network() {
        let mut a = agent();
        let obs = a.env.observe();
        let s = a.features.global(&obs);
        let t = Transition { state: s.clone(), action: alloc::vec![2.0; a.dims()], reward: 1.0, next_state: s, done: false };
        let y0 = a.targets(&[&t]).unwrap();
        for _ in 0..3 {
            a.train_step(&[&t]).unwrap();
        }
        assert_ne!(a.q, a.target);
        assert_eq!(y0, a.targets(&[&t]).unwrap());
        a.sync_target();
        assert_eq!(a.q, a.target);
    }
}
