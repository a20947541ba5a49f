//! Soft actor-critic with a state-value network and twin action-value critics.
//!
//! The actor is a tanh-squashed Gaussian over the network-wide unit action.
//! Critics see `[state, unit action]`. The value target is
//! `Q(x, a) − δ·log π(a|x)` with fresh policy samples, where `Q` is the
//! elementwise minimum of the twin critics (or the first critic alone when
//! `twin_min` is off). Critics regress on `z + γ·V̄(x′)` with a Polyak-averaged
//! copy `V̄` of the value network.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::ppo::{batch_from, clip_grad, layer_sizes, mean_units, new_actor, new_critic, value_gradient};
use super::{mix_seed, ActionSpace, AgentError, EpisodeSummary, Features, Learner, ReplayBuffer, Transition};
use crate::env::{Action, Observation, Scenario, SupplyChainEnv};
use crate::nn::{
    backward_with_input, forward, init_network, reparam_gradient, squashed_log_prob,
    squashed_log_prob_reparam_gradient, Activation, Batch, Direction, Gradient, MlpParams, Optimizer, OptimizerSpec,
    OutputHead,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SacConfig {
    pub hidden: Vec<usize>,
    pub gamma: f64,
    pub temperature: f64,
    pub actor_optimizer: OptimizerSpec,
    pub critic_optimizer: OptimizerSpec,
    pub value_optimizer: OptimizerSpec,
    pub replay_capacity: usize,
    pub batch_size: usize,
    /// Polyak rate of the target value network.
    pub polyak: f64,
    pub twin_min: bool,
    pub reward_scale: f64,
    /// Uniform-random steps before the actor takes over.
    pub warmup_steps: u64,
    pub initial_log_std: f64,
    pub min_order_fraction: f64,
    pub max_grad_norm: f64,
}

impl Default for SacConfig {
    fn default() -> Self {
        SacConfig {
            hidden: alloc::vec![64, 128],
            gamma: 0.99,
            temperature: 0.2,
            actor_optimizer: OptimizerSpec::adam(3e-4),
            critic_optimizer: OptimizerSpec::adam(3e-4),
            value_optimizer: OptimizerSpec::adam(3e-4),
            replay_capacity: 100_000,
            batch_size: 64,
            polyak: 0.005,
            twin_min: true,
            reward_scale: 1e-3,
            warmup_steps: 300,
            initial_log_std: 0.0,
            min_order_fraction: super::DEFAULT_MIN_ORDER_FRACTION,
            max_grad_norm: 10.0,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SacLosses {
    pub value: f64,
    pub critic: f64,
    pub policy: f64,
}

#[derive(Debug, Clone)]
pub struct SacAgent {
    pub config: SacConfig,
    pub actor: MlpParams,
    pub q1: MlpParams,
    pub q2: MlpParams,
    pub value: MlpParams,
    pub value_target: MlpParams,
    actor_opt: Optimizer,
    q1_opt: Optimizer,
    q2_opt: Optimizer,
    value_opt: Optimizer,
    pub buffer: ReplayBuffer<Transition>,
    features: Features,
    space: ActionSpace,
    env: SupplyChainEnv,
    seed: u64,
    rng: ChaCha8Rng,
    pub steps: u64,
}

fn concat_rows(states: &Batch, actions: &Batch) -> Result<Batch, AgentError> {
    let mut data = Vec::with_capacity(states.rows() * (states.cols() + actions.cols()));
    for r in 0..states.rows() {
        data.extend_from_slice(states.row(r));
        data.extend_from_slice(actions.row(r));
    }
    Ok(Batch::from_flat(states.rows(), states.cols() + actions.cols(), data)?)
}

fn column(b: &Batch) -> Vec<f64> {
    (0..b.rows()).map(|r| b.row(r)[0]).collect()
}

impl SacAgent {
    pub fn new(scenario: &Scenario, config: SacConfig, seed: u64) -> Result<Self, AgentError> {
        if !(config.temperature > 0.0) {
            return Err(AgentError::Config("sac temperature must be positive".into()));
        }
        if config.batch_size == 0 || !(config.polyak > 0.0 && config.polyak <= 1.0) {
            return Err(AgentError::Config("sac batch_size > 0 and polyak in (0, 1]".into()));
        }
        let features = Features::new(scenario);
        let space = ActionSpace::new(scenario, config.min_order_fraction);
        let n = features.global_len();
        let d = space.dim();
        let actor = new_actor(n, &config.hidden, d, config.initial_log_std, mix_seed(seed, 1, 0))?;
        let q_sizes = layer_sizes(n + d, &config.hidden, 1);
        let q1 = init_network(&q_sizes, Activation::Relu, OutputHead::Linear, mix_seed(seed, 2, 0))?;
        let q2 = init_network(&q_sizes, Activation::Relu, OutputHead::Linear, mix_seed(seed, 2, 1))?;
        let value = new_critic(n, &config.hidden, mix_seed(seed, 2, 2))?;
        Ok(SacAgent {
            actor_opt: Optimizer::new(config.actor_optimizer, &actor),
            q1_opt: Optimizer::new(config.critic_optimizer, &q1),
            q2_opt: Optimizer::new(config.critic_optimizer, &q2),
            value_opt: Optimizer::new(config.value_optimizer, &value),
            value_target: value.clone(),
            actor,
            q1,
            q2,
            value,
            buffer: ReplayBuffer::new(config.replay_capacity),
            features,
            space,
            env: SupplyChainEnv::new(scenario.clone(), seed)?,
            seed,
            rng: ChaCha8Rng::seed_from_u64(mix_seed(seed, 3, 0)),
            steps: 0,
            config,
        })
    }

    pub fn space(&self) -> &ActionSpace {
        &self.space
    }

    /// Unit action: the squashed mean when `deterministic`, else a squashed sample.
    pub fn act_units<R: Rng + ?Sized>(&self, state: &[f64], deterministic: bool, rng: &mut R) -> Vec<f64> {
        if deterministic {
            return mean_units(&self.actor, state);
        }
        let mean = self.actor.predict(state).unwrap_or_default();
        mean.iter()
            .zip(&self.actor.log_std)
            .map(|(m, s)| {
                let e: f64 = rng.sample(StandardNormal);
                libm::tanh(m + libm::exp(*s) * e)
            })
            .collect()
    }

    pub fn act<R: Rng + ?Sized>(&self, obs: &Observation, deterministic: bool, rng: &mut R) -> Action {
        self.space.decode(obs, &self.act_units(&self.features.global(obs), deterministic, rng))
    }

    fn q_values(&self, q: &MlpParams, states: &Batch, actions: &Batch) -> Result<Vec<f64>, AgentError> {
        let (out, _) = forward(q, &concat_rows(states, actions)?)?;
        Ok(column(&out))
    }

    /// Policy loss `mean_r [δ·log π(tanh u_r | x_r) − Q(x_r, tanh u_r)]` with
    /// `u_r = mean(x_r) + std·noise_r`, and its gradient with respect to the actor.
    pub fn policy_loss_and_gradient(&self, states: &Batch, noise: &Batch) -> Result<(f64, Gradient), AgentError> {
        let rows = states.rows();
        let dim = self.actor.output_size();
        let delta = self.config.temperature;
        let (mean, cache) = forward(&self.actor, states)?;
        let std: Vec<f64> = self.actor.log_std.iter().map(|s| libm::exp(*s)).collect();
        let mut raw = Batch::zeros(rows, dim);
        let mut units = Batch::zeros(rows, dim);
        for r in 0..rows {
            for j in 0..dim {
                let u = mean.row(r)[j] + std[j] * noise.row(r)[j];
                raw.row_mut(r)[j] = u;
                units.row_mut(r)[j] = libm::tanh(u);
            }
        }
        let xa = concat_rows(states, &units)?;
        let (v1, c1) = forward(&self.q1, &xa)?;
        let (v2, c2) = forward(&self.q2, &xa)?;
        let n = states.cols();
        let mut up1 = Batch::zeros(rows, 1);
        let mut up2 = Batch::zeros(rows, 1);
        let mut loss = 0.0;
        let inv = 1.0 / rows as f64;
        for r in 0..rows {
            let use_second = self.config.twin_min && v2.row(r)[0] < v1.row(r)[0];
            let q = if use_second { v2.row(r)[0] } else { v1.row(r)[0] };
            let lp = squashed_log_prob(mean.row(r), &self.actor.log_std, raw.row(r));
            loss += inv * (delta * lp - q);
            if use_second {
                up2.row_mut(r)[0] = inv;
            } else {
                up1.row_mut(r)[0] = inv;
            }
        }
        let (_, dx1) = backward_with_input(&self.q1, &c1, &up1)?;
        let (_, dx2) = backward_with_input(&self.q2, &c2, &up2)?;
        // -dQ/du through tanh
        let mut du = Batch::zeros(rows, dim);
        for r in 0..rows {
            for j in 0..dim {
                let t = units.row(r)[j];
                let dq = dx1.row(r)[n + j] + dx2.row(r)[n + j];
                du.row_mut(r)[j] = -dq * (1.0 - t * t);
            }
        }
        let mut grad = reparam_gradient(&self.actor, &cache, noise, &du, &alloc::vec![0.0; dim])?;
        let coefs = alloc::vec![delta * inv; rows];
        let (glp, _) = squashed_log_prob_reparam_gradient(&self.actor, states, noise, &coefs)?;
        grad.add_scaled(&glp, 1.0)?;
        Ok((loss, grad))
    }

    fn noise(&mut self, rows: usize, dim: usize) -> Batch {
        let data = (0..rows * dim).map(|_| self.rng.sample::<f64, _>(StandardNormal)).collect();
        Batch::from_flat(rows, dim, data).expect("noise shape")
    }

    pub fn train_step(&mut self, batch: &[&Transition]) -> Result<SacLosses, AgentError> {
        if batch.is_empty() {
            return Err(AgentError::Empty("sac batch"));
        }
        let rows = batch.len();
        let n = self.actor.input_size();
        let dim = self.actor.output_size();
        let w = alloc::vec![1.0 / rows as f64; rows];
        let states = batch_from(batch.iter().map(|t| t.state.as_slice()), n)?;
        let actions = batch_from(batch.iter().map(|t| t.action.as_slice()), dim)?;
        let next = batch_from(batch.iter().map(|t| t.next_state.as_slice()), n)?;

        // value target from fresh samples
        let noise = self.noise(rows, dim);
        let (mean, _) = forward(&self.actor, &states)?;
        let mut fresh_raw = Batch::zeros(rows, dim);
        let mut fresh = Batch::zeros(rows, dim);
        for r in 0..rows {
            for j in 0..dim {
                let u = mean.row(r)[j] + libm::exp(self.actor.log_std[j]) * noise.row(r)[j];
                fresh_raw.row_mut(r)[j] = u;
                fresh.row_mut(r)[j] = libm::tanh(u);
            }
        }
        let f1 = self.q_values(&self.q1, &states, &fresh)?;
        let f2 = self.q_values(&self.q2, &states, &fresh)?;
        let v_target: Vec<f64> = (0..rows)
            .map(|r| {
                let q = if self.config.twin_min { f1[r].min(f2[r]) } else { f1[r] };
                q - self.config.temperature * squashed_log_prob(mean.row(r), &self.actor.log_std, fresh_raw.row(r))
            })
            .collect();
        let (mut gv, value_loss) = value_gradient(&self.value, &states, &v_target, &w)?;
        clip_grad(&mut gv, self.config.max_grad_norm);

        // critic targets use the lagged value network
        let (vn, _) = forward(&self.value_target, &next)?;
        let y: Vec<f64> = batch
            .iter()
            .enumerate()
            .map(|(r, t)| if t.done { t.reward } else { t.reward + self.config.gamma * vn.row(r)[0] })
            .collect();
        let xa = concat_rows(&states, &actions)?;
        let (mut g1, l1) = value_gradient(&self.q1, &xa, &y, &w)?;
        let (mut g2, l2) = value_gradient(&self.q2, &xa, &y, &w)?;
        clip_grad(&mut g1, self.config.max_grad_norm);
        clip_grad(&mut g2, self.config.max_grad_norm);

        let pnoise = self.noise(rows, dim);
        let (policy_loss, mut gp) = self.policy_loss_and_gradient(&states, &pnoise)?;
        clip_grad(&mut gp, self.config.max_grad_norm);

        for l in [value_loss, l1, l2, policy_loss] {
            if !l.is_finite() {
                return Err(AgentError::NonFinite("sac loss"));
            }
        }
        self.value_opt.step(&mut self.value, &gv, Direction::Ascend)?;
        self.q1_opt.step(&mut self.q1, &g1, Direction::Ascend)?;
        self.q2_opt.step(&mut self.q2, &g2, Direction::Ascend)?;
        self.actor_opt.step(&mut self.actor, &gp, Direction::Descend)?;
        let tau = self.config.polyak;
        for (t, v) in self.value_target.values_mut().zip(self.value.values()) {
            *t = (1.0 - tau) * *t + tau * v;
        }
        Ok(SacLosses { value: value_loss, critic: l1 + l2, policy: policy_loss })
    }
}

impl Learner for SacAgent {
    fn algorithm(&self) -> &'static str {
        "sac"
    }

    fn train_epoch(&mut self, epoch: u64) -> Result<EpisodeSummary, AgentError> {
        let mut obs = self.env.reset(mix_seed(self.seed, epoch, 0));
        let mut summary = EpisodeSummary::default();
        let mut state = self.features.global(&obs);
        let dim = self.space.dim();
        while !self.env.is_done() {
            let units: Vec<f64> = if self.steps < self.config.warmup_steps {
                (0..dim).map(|_| self.rng.random_range(-1.0..=1.0)).collect()
            } else {
                let mut rng = self.rng.clone();
                let u = self.act_units(&state, false, &mut rng);
                self.rng = rng;
                u
            };
            let action = self.space.decode(&obs, &units);
            let r = self.env.step(&action)?;
            summary.record(&r);
            let next = self.features.global(&r.observation);
            self.buffer.push(Transition {
                state: core::mem::take(&mut state),
                action: units,
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
            state = next;
            obs = r.observation;
        }
        Ok(summary)
    }

    fn frozen_action(&self, obs: &Observation) -> Action {
        self.space.decode(obs, &mean_units(&self.actor, &self.features.global(obs)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::NodeId;
    use crate::scenarios::paper_default;

    fn agent(cfg: SacConfig) -> SacAgent {
        SacAgent::new(&paper_default(), cfg, 4).unwrap()
    }

    #[test]
    fn zero_actor_acts_at_midpoint() {
        let mut a = agent(SacConfig::default());
        let sizes = a.actor.layer_sizes.clone();
        a.actor = MlpParams::zeros(&sizes, Activation::Tanh, OutputHead::Gaussian).unwrap();
        let obs = a.env.observe();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let act = a.act(&obs, true, &mut rng);
        for node in a.space.nodes() {
            for p in 0..3 {
                let room = a.space.room(&obs, node, p);
                assert_eq!(act.node(node)[p], 0.5 * room);
            }
        }
        assert_eq!(act, a.act(&obs, true, &mut rng));
        assert_eq!(act.node(NodeId::Dc(0))[0], 210.0);
    }

    #[test]
    fn policy_gradient_matches_finite_differences() {
        let s = paper_default();
        let mut cfg = SacConfig { hidden: alloc::vec![6, 5], ..Default::default() };
        cfg.temperature = 0.3;
        let mut a = SacAgent::new(&s, cfg, 11).unwrap();
        for (i, v) in a.actor.log_std.iter_mut().enumerate() {
            *v = -0.5 + 0.05 * i as f64;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = a.actor.input_size();
        let dim = a.actor.output_size();
        let states = Batch::from_flat(3, n, (0..3 * n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let noise = Batch::from_flat(3, dim, (0..3 * dim).map(|_| rng.sample(StandardNormal)).collect()).unwrap();
        let (_, g) = a.policy_loss_and_gradient(&states, &noise).unwrap();
        let analytic: Vec<f64> = g.values().copied().collect();
        let h = 1e-5;
        let mut diff = 0.0;
        let mut na = 0.0;
        let mut nn = 0.0;
        for c in 0..analytic.len() {
            let mut plus = a.clone();
            *plus.actor.values_mut().nth(c).unwrap() += h;
            let mut minus = a.clone();
            *minus.actor.values_mut().nth(c).unwrap() -= h;
            let lp = plus.policy_loss_and_gradient(&states, &noise).unwrap().0;
            let lm = minus.policy_loss_and_gradient(&states, &noise).unwrap().0;
            let num = (lp - lm) / (2.0 * h);
            diff += (analytic[c] - num) * (analytic[c] - num);
            na += analytic[c] * analytic[c];
            nn += num * num;
        }
        let rel = libm::sqrt(diff) / libm::sqrt(na).max(libm::sqrt(nn));
        assert!(rel < 1e-4, "relative error {rel}");
    }

    #[test]
    fn value_fixed_point_has_zero_loss() {
        let mut a = agent(SacConfig::default());
        let obs = a.env.observe();
        let s = a.features.global(&obs);
        let states = Batch::single(&s);
        let noise = a.noise(1, a.actor.output_size());
        // a value net that already outputs the target gives zero loss
        let (mean, _) = forward(&a.actor, &states).unwrap();
        let raw: Vec<f64> = (0..noise.cols()).map(|j| mean.row(0)[j] + libm::exp(a.actor.log_std[j]) * noise.row(0)[j]).collect();
        let units = Batch::single(&raw.iter().map(|u| libm::tanh(*u)).collect::<Vec<_>>());
        let q = a.q_values(&a.q1, &states, &units).unwrap()[0].min(a.q_values(&a.q2, &states, &units).unwrap()[0]);
        let target = q - a.config.temperature * squashed_log_prob(mean.row(0), &a.actor.log_std, &raw);
        let last = a.value.layers.len() - 1;
        let current = a.value.predict(&s).unwrap()[0];
        a.value.layers[last].biases[0] += target - current;
        let (g, loss) = value_gradient(&a.value, &states, &[target], &[1.0]).unwrap();
        assert!(loss < 1e-20);
        assert!(g.norm() < 1e-9);
    }

    #[test]
    fn training_steps_run() {
        let mut a = agent(SacConfig { warmup_steps: 10, batch_size: 8, ..Default::default() });
        let e = a.train_epoch(0).unwrap();
        assert_eq!(e.steps, 30);
        assert!(a.buffer.len() == 30);
    }
}
