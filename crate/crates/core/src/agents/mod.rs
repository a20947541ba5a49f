//! Decision policies and the shared plumbing they use: feature extraction,
//! action decoding, replay storage and episode rollout.

pub mod a3c;
pub mod dqn;
pub mod ppo;
pub mod sac;
pub mod ss;

use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::env::{Action, CostBreakdown, EnvError, NodeId, Observation, Scenario, StepResult, SupplyChainEnv};
use crate::nn::NnError;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AgentError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("invalid setting {0}")]
    Config(String),
    #[error("non-finite {0}")]
    NonFinite(&'static str),
    #[error("empty {0}")]
    Empty(&'static str),
}

/// Anything that maps an observation to an order for every node.
pub trait Policy {
    fn act(&mut self, obs: &Observation, rng: &mut dyn RngCore) -> Action;
}

/// A trainable agent that owns its environment replicas.
pub trait Learner {
    fn algorithm(&self) -> &'static str;
    /// One training epoch; returns the mean of the epoch's training episodes.
    fn train_epoch(&mut self, epoch: u64) -> Result<EpisodeSummary, AgentError>;
    /// Exploitation action (greedy / distribution mean) with learning frozen.
    fn frozen_action(&self, obs: &Observation) -> Action;
}

struct Frozen<'a, L: ?Sized>(&'a L);

impl<L: Learner + ?Sized> Policy for Frozen<'_, L> {
    fn act(&mut self, obs: &Observation, _rng: &mut dyn RngCore) -> Action {
        self.0.frozen_action(obs)
    }
}

/// Seed of evaluation episode `e`.
pub fn eval_episode_seed(seed: u64, e: u64) -> u64 {
    mix_seed(seed, e, 0xE7A1)
}

/// Plays `episodes` episodes with the learner's frozen policy.
pub fn evaluate<L: Learner + ?Sized>(
    scenario: &Scenario,
    learner: &L,
    episodes: u64,
    seed: u64,
) -> Result<Vec<EpisodeSummary>, AgentError> {
    evaluate_policy(scenario, &mut Frozen(learner), episodes, seed)
}

pub fn evaluate_policy(
    scenario: &Scenario,
    policy: &mut dyn Policy,
    episodes: u64,
    seed: u64,
) -> Result<Vec<EpisodeSummary>, AgentError> {
    let mut env = SupplyChainEnv::new(scenario.clone(), seed)?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(mix_seed(seed, 0, 0xA11));
    (0..episodes).map(|e| run_episode(&mut env, policy, eval_episode_seed(seed, e), &mut rng)).collect()
}

/// splitmix64 finaliser; used to derive per-episode and per-worker seeds.
pub fn mix_seed(a: u64, b: u64, c: u64) -> u64 {
    let mut z = a
        .wrapping_add(b.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(c.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Normalised inputs for the networks.
///
/// Stock and pipeline are divided by the node-product capacity, lead-time
/// forecasts by [`LEAD_SCALE`], and every vector ends with the weekday one-hot
/// and the elapsed fraction of the horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct Features {
    products: usize,
    dc_cap: Vec<Vec<f64>>,
    retailer_cap: Vec<Vec<f64>>,
    retailer_dc: Vec<usize>,
    dc_retailers: Vec<Vec<usize>>,
}

pub const LEAD_SCALE: f64 = 10.0;

fn frac(x: f64, cap: f64) -> f64 {
    if cap > 0.0 {
        x / cap
    } else {
        0.0
    }
}

impl Features {
    pub fn new(s: &Scenario) -> Self {
        let np = s.product_count();
        Features {
            products: np,
            dc_cap: (0..s.dcs.len()).map(|k| (0..np).map(|p| s.capacity(NodeId::Dc(k), p)).collect()).collect(),
            retailer_cap: (0..s.retailers.len())
                .map(|c| (0..np).map(|p| s.capacity(NodeId::Retailer(c), p)).collect())
                .collect(),
            retailer_dc: s.retailers.iter().map(|r| r.dc).collect(),
            dc_retailers: (0..s.dcs.len()).map(|k| s.retailers_of(k)).collect(),
        }
    }

    fn tail(obs: &Observation, v: &mut Vec<f64>) {
        v.extend_from_slice(&obs.day_one_hot());
        v.push(if obs.horizon > 0 { obs.period as f64 / obs.horizon as f64 } else { 0.0 });
    }

    pub fn retailer_len(&self) -> usize {
        4 * self.products + 1 + 8
    }

    pub fn dc_len(&self) -> usize {
        4 * self.products + 1 + 8
    }

    pub fn global_len(&self) -> usize {
        self.retailer_cap.len() * (3 * self.products + 1) + self.dc_cap.len() * (2 * self.products + 1) + 8
    }

    /// One retailer's own view plus its DC's stock.
    pub fn retailer(&self, obs: &Observation, c: usize) -> Vec<f64> {
        let r = &obs.retailers[c];
        let cap = &self.retailer_cap[c];
        let k = self.retailer_dc[c];
        let mut v = Vec::with_capacity(self.retailer_len());
        v.extend((0..self.products).map(|p| frac(r.on_hand[p], cap[p])));
        v.extend((0..self.products).map(|p| frac(r.pipeline[p], cap[p])));
        v.extend((0..self.products).map(|p| frac(r.demand_forecast[p], cap[p])));
        v.extend((0..self.products).map(|p| frac(obs.dcs[k].on_hand[p], self.dc_cap[k][p])));
        v.push(r.lead_forecast / LEAD_SCALE);
        Self::tail(obs, &mut v);
        v
    }

    /// One DC's view plus the aggregate stock and forecast of its retailers.
    pub fn dc(&self, obs: &Observation, k: usize) -> Vec<f64> {
        let d = &obs.dcs[k];
        let cap = &self.dc_cap[k];
        let mut v = Vec::with_capacity(self.dc_len());
        v.extend((0..self.products).map(|p| frac(d.on_hand[p], cap[p])));
        v.extend((0..self.products).map(|p| frac(d.pipeline[p], cap[p])));
        for p in 0..self.products {
            let s: f64 = self.dc_retailers[k].iter().map(|&c| obs.retailers[c].on_hand[p]).sum();
            v.push(frac(s, cap[p]));
        }
        for p in 0..self.products {
            let s: f64 = self.dc_retailers[k].iter().map(|&c| obs.retailers[c].demand_forecast[p]).sum();
            v.push(frac(s, cap[p]));
        }
        v.push(d.lead_forecast / LEAD_SCALE);
        Self::tail(obs, &mut v);
        v
    }

    /// Network-wide view: retailers, then DCs, then the calendar tail.
    pub fn global(&self, obs: &Observation) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.global_len());
        for (c, r) in obs.retailers.iter().enumerate() {
            let cap = &self.retailer_cap[c];
            v.extend((0..self.products).map(|p| frac(r.on_hand[p], cap[p])));
            v.extend((0..self.products).map(|p| frac(r.pipeline[p], cap[p])));
            v.extend((0..self.products).map(|p| frac(r.demand_forecast[p], cap[p])));
            v.push(r.lead_forecast / LEAD_SCALE);
        }
        for (k, d) in obs.dcs.iter().enumerate() {
            let cap = &self.dc_cap[k];
            v.extend((0..self.products).map(|p| frac(d.on_hand[p], cap[p])));
            v.extend((0..self.products).map(|p| frac(d.pipeline[p], cap[p])));
            v.push(d.lead_forecast / LEAD_SCALE);
        }
        Self::tail(obs, &mut v);
        v
    }
}

/// Maps unit-interval policy outputs to order quantities.
///
/// A unit value `a ∈ [-1, 1]` becomes `(a + 1) / 2 · q_cap` with
/// `q_cap = V_max − on_hand − pipeline`; quantities below
/// `min_order_fraction · V_max` are dropped to zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionSpace {
    pub dc_capacity: Vec<Vec<f64>>,
    pub retailer_capacity: Vec<Vec<f64>>,
    pub min_order_fraction: f64,
}

pub const DEFAULT_MIN_ORDER_FRACTION: f64 = 0.05;

impl ActionSpace {
    pub fn new(s: &Scenario, min_order_fraction: f64) -> Self {
        let f = Features::new(s);
        ActionSpace { dc_capacity: f.dc_cap, retailer_capacity: f.retailer_cap, min_order_fraction }
    }

    pub fn products(&self) -> usize {
        self.dc_capacity.first().or(self.retailer_capacity.first()).map_or(0, |v| v.len())
    }

    /// Length of the network-wide action vector (nodes in [`Scenario::nodes`] order).
    pub fn dim(&self) -> usize {
        (self.dc_capacity.len() + self.retailer_capacity.len()) * self.products()
    }

    pub fn capacity(&self, node: NodeId, p: usize) -> f64 {
        match node {
            NodeId::Dc(k) => self.dc_capacity[k][p],
            NodeId::Retailer(c) => self.retailer_capacity[c][p],
        }
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        (0..self.dc_capacity.len())
            .map(NodeId::Dc)
            .chain((0..self.retailer_capacity.len()).map(NodeId::Retailer))
    }

    pub fn room(&self, obs: &Observation, node: NodeId, p: usize) -> f64 {
        let (on_hand, pipeline) = match node {
            NodeId::Dc(k) => (obs.dcs[k].on_hand[p], obs.dcs[k].pipeline[p]),
            NodeId::Retailer(c) => (obs.retailers[c].on_hand[p], obs.retailers[c].pipeline[p]),
        };
        (self.capacity(node, p) - on_hand - pipeline).max(0.0)
    }

    fn threshold(&self, q: f64, node: NodeId, p: usize) -> f64 {
        if q < self.min_order_fraction * self.capacity(node, p) {
            0.0
        } else {
            q
        }
    }

    pub fn quantity(&self, obs: &Observation, node: NodeId, p: usize, unit: f64) -> f64 {
        let u = if unit.is_nan() { -1.0 } else { unit.clamp(-1.0, 1.0) };
        self.threshold(0.5 * (u + 1.0) * self.room(obs, node, p), node, p)
    }

    /// Grid cell `i` of `cells` covers `i / (cells - 1) · q_cap`.
    pub fn grid_quantity(&self, obs: &Observation, node: NodeId, p: usize, cell: usize, cells: usize) -> f64 {
        let f = if cells > 1 { cell as f64 / (cells - 1) as f64 } else { 0.0 };
        self.threshold(f * self.room(obs, node, p), node, p)
    }

    pub fn decode_node(&self, obs: &Observation, node: NodeId, units: &[f64], into: &mut Action) {
        let row = into.node_mut(node);
        for (p, u) in units.iter().enumerate() {
            row[p] = self.quantity(obs, node, p, *u);
        }
    }

    /// Decodes a network-wide unit vector.
    pub fn decode(&self, obs: &Observation, units: &[f64]) -> Action {
        let np = self.products();
        let mut a = Action::zeros(self.dc_capacity.len(), self.retailer_capacity.len(), np);
        let nodes: Vec<NodeId> = self.nodes().collect();
        for (i, node) in nodes.into_iter().enumerate() {
            self.decode_node(obs, node, &units[i * np..(i + 1) * np], &mut a);
        }
        a
    }
}

/// Uniform unit actions, decoded through the same [`ActionSpace`] as the learners.
#[derive(Debug, Clone)]
pub struct RandomPolicy {
    pub space: ActionSpace,
}

impl Policy for RandomPolicy {
    fn act(&mut self, obs: &Observation, rng: &mut dyn RngCore) -> Action {
        let units: Vec<f64> = (0..self.space.dim()).map(|_| rng.random_range(-1.0..=1.0)).collect();
        self.space.decode(obs, &units)
    }
}

/// Never orders.
#[derive(Debug, Clone, Copy, Default)]
pub struct NullPolicy;

impl Policy for NullPolicy {
    fn act(&mut self, obs: &Observation, _rng: &mut dyn RngCore) -> Action {
        Action::zeros(obs.dcs.len(), obs.retailers.len(), obs.dcs.first().map_or(0, |d| d.on_hand.len()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub done: bool,
}

/// Fixed-capacity ring of transitions with uniform sampling.
#[derive(Debug, Clone)]
pub struct ReplayBuffer<T> {
    capacity: usize,
    items: Vec<T>,
    next: usize,
}

impl<T> ReplayBuffer<T> {
    pub fn new(capacity: usize) -> Self {
        ReplayBuffer { capacity: capacity.max(1), items: Vec::new(), next: 0 }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn push(&mut self, item: T) {
        if self.items.len() < self.capacity {
            self.items.push(item);
        } else {
            self.items[self.next] = item;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.items.iter()
    }

    /// `batch` draws with replacement; `None` until the buffer holds `batch` items.
    pub fn sample<R: RngCore + ?Sized>(&self, batch: usize, rng: &mut R) -> Option<Vec<&T>> {
        if batch == 0 || self.items.len() < batch {
            return None;
        }
        Some((0..batch).map(|_| &self.items[rng.random_range(0..self.items.len())]).collect())
    }
}

/// Totals over one episode.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub profit: f64,
    pub revenue: f64,
    pub costs: CostBreakdown,
    pub demand: f64,
    pub sold: f64,
    pub unmet: f64,
    pub wasted: f64,
    pub steps: u32,
    pub violations: u32,
}

impl EpisodeSummary {
    pub fn record(&mut self, r: &StepResult) {
        self.profit += r.reward;
        self.revenue += r.revenue;
        self.costs.add(&r.costs);
        self.demand += r.customer_demand;
        self.sold += r.sold_units;
        self.unmet += r.unmet_units;
        self.wasted += r.wasted_units;
        self.steps += 1;
        if !r.constraints.satisfied() {
            self.violations += 1;
        }
    }

    pub fn fill_rate(&self) -> f64 {
        if self.demand > 0.0 {
            self.sold / self.demand
        } else {
            1.0
        }
    }

    /// Field-wise mean of several summaries.
    pub fn mean(items: &[EpisodeSummary]) -> EpisodeSummary {
        let mut out = EpisodeSummary::default();
        if items.is_empty() {
            return out;
        }
        for e in items {
            out.profit += e.profit;
            out.revenue += e.revenue;
            out.costs.add(&e.costs);
            out.demand += e.demand;
            out.sold += e.sold;
            out.unmet += e.unmet;
            out.wasted += e.wasted;
            out.steps += e.steps;
            out.violations += e.violations;
        }
        let n = items.len() as f64;
        out.profit /= n;
        out.revenue /= n;
        out.costs = scale_costs(&out.costs, 1.0 / n);
        out.demand /= n;
        out.sold /= n;
        out.unmet /= n;
        out.wasted /= n;
        out
    }
}

pub fn scale_costs(c: &CostBreakdown, f: f64) -> CostBreakdown {
    CostBreakdown {
        purchase: c.purchase * f,
        holding: c.holding * f,
        wastage: c.wastage * f,
        shortage: c.shortage * f,
        transport: c.transport * f,
    }
}

/// Resets `env` with `seed` and plays one full episode.
pub fn run_episode(
    env: &mut SupplyChainEnv,
    policy: &mut dyn Policy,
    seed: u64,
    rng: &mut dyn RngCore,
) -> Result<EpisodeSummary, AgentError> {
    let mut obs = env.reset(seed);
    let mut summary = EpisodeSummary::default();
    while !env.is_done() {
        let action = policy.act(&obs, rng);
        let r = env.step(&action)?;
        summary.record(&r);
        obs = r.observation;
    }
    Ok(summary)
}
#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenarios::paper_default;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn feature_lengths_match() {
        let s = paper_default();
        let env = SupplyChainEnv::new(s.clone(), 1).unwrap();
        let f = Features::new(&s);
        let obs = env.observe();
        assert_eq!(f.global(&obs).len(), f.global_len());
        assert_eq!(f.retailer(&obs, 2).len(), f.retailer_len());
        assert_eq!(f.dc(&obs, 0).len(), f.dc_len());
    }

    #[test]
    fn unit_mapping_and_threshold() {
        let s = paper_default();
        let env = SupplyChainEnv::new(s.clone(), 1).unwrap();
        let obs = env.observe();
        let space = ActionSpace::new(&s, 0.05);
        // DC product 0: capacity 500, on hand 80
        assert_eq!(space.quantity(&obs, NodeId::Dc(0), 0, 1.0), 420.0);
        assert_eq!(space.quantity(&obs, NodeId::Dc(0), 0, 0.0), 210.0);
        assert_eq!(space.quantity(&obs, NodeId::Dc(0), 0, -1.0), 0.0);
        // 0.05 * 420 = 21 < 25
        assert_eq!(space.quantity(&obs, NodeId::Dc(0), 0, -0.9), 0.0);
        assert_eq!(space.grid_quantity(&obs, NodeId::Dc(0), 0, 10, 11), 420.0);
        assert_eq!(space.grid_quantity(&obs, NodeId::Dc(0), 0, 0, 11), 0.0);
        assert_eq!(space.dim(), 12);
    }

    #[test]
    fn replay_ring_drops_oldest() {
        let mut b = ReplayBuffer::new(3);
        for i in 0..5 {
            b.push(i);
        }
        let mut held: Vec<i32> = b.iter().copied().collect();
        held.sort();
        assert_eq!(held, alloc::vec![2, 3, 4]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(b.sample(4, &mut rng).is_none());
        let s = b.sample(3, &mut rng).unwrap();
        assert!(s.iter().all(|v| **v >= 2));
    }

    #[test]
    fn mixed_seeds_differ() {
        assert_ne!(mix_seed(1, 0, 0), mix_seed(1, 1, 0));
        assert_ne!(mix_seed(1, 0, 1), mix_seed(1, 1, 0));
        assert_eq!(mix_seed(5, 6, 7), mix_seed(5, 6, 7));
    }
}
