//! Periodic-review (s,S) rule and its grid search.

use alloc::vec::Vec;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{mix_seed, run_episode, AgentError, Policy};
use crate::env::{Action, NodeId, Observation, Scenario, SupplyChainEnv};

/// Order `S − IP` when the inventory position is strictly below `s`.
pub fn ss_decide(s: f64, big_s: f64, inventory_position: f64) -> f64 {
    if inventory_position < s {
        (big_s - inventory_position).max(0.0)
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SsLevels {
    pub reorder_point: f64,
    pub order_up_to: f64,
}

/// How grid values are read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SsUnits {
    /// Units of stock, the same at every node.
    Absolute,
    /// Fractions of each node-product capacity.
    #[default]
    CapacityFraction,
}

/// Levels per node (in [`Scenario::nodes`] order) and product.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SsPolicy {
    pub levels: Vec<Vec<SsLevels>>,
}

impl SsPolicy {
    pub fn uniform(scenario: &Scenario, s: f64, big_s: f64, units: SsUnits) -> Self {
        let levels = scenario
            .nodes()
            .map(|node| {
                (0..scenario.product_count())
                    .map(|p| {
                        let f = match units {
                            SsUnits::Absolute => 1.0,
                            SsUnits::CapacityFraction => scenario.capacity(node, p),
                        };
                        SsLevels { reorder_point: s * f, order_up_to: big_s * f }
                    })
                    .collect()
            })
            .collect();
        SsPolicy { levels }
    }
}

impl Policy for SsPolicy {
    fn act(&mut self, obs: &Observation, _rng: &mut dyn RngCore) -> Action {
        let np = self.levels.first().map_or(0, |l| l.len());
        let mut a = Action::zeros(obs.dcs.len(), obs.retailers.len(), np);
        let nodes = (0..obs.dcs.len()).map(NodeId::Dc).chain((0..obs.retailers.len()).map(NodeId::Retailer));
        for (i, node) in nodes.enumerate() {
            let (on_hand, pipeline) = match node {
                NodeId::Dc(k) => (&obs.dcs[k].on_hand, &obs.dcs[k].pipeline),
                NodeId::Retailer(c) => (&obs.retailers[c].on_hand, &obs.retailers[c].pipeline),
            };
            let row = a.node_mut(node);
            for p in 0..np {
                let l = self.levels[i][p];
                row[p] = ss_decide(l.reorder_point, l.order_up_to, on_hand[p] + pipeline[p]);
            }
        }
        a
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SsCandidate {
    pub reorder_point: f64,
    pub order_up_to: f64,
    pub mean_profit: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SsTuning {
    pub policy: SsPolicy,
    pub best: SsCandidate,
    /// Every evaluated pair in evaluation order.
    pub candidates: Vec<SsCandidate>,
}

/// Seed of evaluation episode `e` in a tuning run.
pub fn tuning_episode_seed(seed: u64, e: u64) -> u64 {
    mix_seed(seed, e, 0x5353)
}

/// Mean episode profit of `policy` over `episodes` common-random-number episodes.
pub fn mean_profit(scenario: &Scenario, policy: &mut SsPolicy, episodes: u64, seed: u64) -> Result<f64, AgentError> {
    let mut env = SupplyChainEnv::new(scenario.clone(), seed)?;
    let mut unused = ChaCha8Rng::seed_from_u64(0);
    let mut total = 0.0;
    for e in 0..episodes {
        total += run_episode(&mut env, policy, tuning_episode_seed(seed, e), &mut unused)?.profit;
    }
    Ok(total / episodes.max(1) as f64)
}

/// Exhaustive search over `s_grid × S_grid` (pairs with `s ≤ S`). Pairs are visited
/// by ascending `S`, then ascending `s`, and only a strictly better mean replaces
/// the incumbent, so ties go to the smaller `S` and then the smaller `s`.
pub fn ss_grid_tune(
    scenario: &Scenario,
    s_grid: &[f64],
    big_s_grid: &[f64],
    units: SsUnits,
    episodes: u64,
    seed: u64,
) -> Result<SsTuning, AgentError> {
    let mut pairs: Vec<(f64, f64)> = Vec::new();
    for &big_s in big_s_grid {
        for &s in s_grid {
            if s <= big_s {
                pairs.push((s, big_s));
            }
        }
    }
    pairs.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.total_cmp(&b.0)));
    pairs.dedup();
    if pairs.is_empty() {
        return Err(AgentError::Empty("(s,S) grid"));
    }
    let mut candidates = Vec::with_capacity(pairs.len());
    let mut best: Option<usize> = None;
    for (s, big_s) in pairs {
        let mut policy = SsPolicy::uniform(scenario, s, big_s, units);
        let m = mean_profit(scenario, &mut policy, episodes, seed)?;
        candidates.push(SsCandidate { reorder_point: s, order_up_to: big_s, mean_profit: m });
        if best.is_none_or(|b: usize| m > candidates[b].mean_profit) {
            best = Some(candidates.len() - 1);
        }
    }
    let best = candidates[best.unwrap()].clone();
    Ok(SsTuning {
        policy: SsPolicy::uniform(scenario, best.reorder_point, best.order_up_to, units),
        best,
        candidates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenarios::paper_default;

    #[test]
    fn decide_examples() {
        assert_eq!(ss_decide(50.0, 120.0, 40.0), 80.0);
        assert_eq!(ss_decide(50.0, 120.0, 50.0), 0.0);
        assert_eq!(ss_decide(50.0, 120.0, 130.0), 0.0);
    }

    #[test]
    fn single_pair_is_returned() {
        let s = paper_default();
        let t = ss_grid_tune(&s, &[0.2], &[0.5], SsUnits::CapacityFraction, 2, 1).unwrap();
        assert_eq!((t.best.reorder_point, t.best.order_up_to), (0.2, 0.5));
        assert_eq!(t.candidates.len(), 1);
    }

    #[test]
    fn ties_prefer_smaller_levels() {
        // s = 0 never orders, so every S with s = 0 earns the same profit
        let s = paper_default();
        let t = ss_grid_tune(&s, &[0.0], &[0.3, 0.1, 0.2], SsUnits::CapacityFraction, 2, 3).unwrap();
        assert!(t.candidates.iter().all(|c| c.mean_profit == t.candidates[0].mean_profit));
        assert_eq!(t.best.order_up_to, 0.1);
    }

    #[test]
    fn empty_grid_is_an_error() {
        let s = paper_default();
        assert!(ss_grid_tune(&s, &[0.5], &[0.2], SsUnits::CapacityFraction, 1, 1).is_err());
    }
}
