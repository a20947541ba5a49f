//! Training-log rows, convergence detection and multi-seed summaries.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::agents::EpisodeSummary;
use crate::env::CostBreakdown;

pub const DEFAULT_CONVERGENCE_WINDOW: usize = 50;
pub const DEFAULT_SLOPE_TOL: f64 = 1e-3;

/// One per-epoch (or evaluation) log line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub epoch: u64,
    pub seed: u64,
    pub algorithm: String,
    pub mean_episode_reward: f64,
    pub costs: CostBreakdown,
    pub fill_rate: f64,
    pub wasted_units: f64,
    pub wall_clock_ms: u64,
}

impl MetricsRow {
    pub fn from_summary(epoch: u64, seed: u64, algorithm: &str, s: &EpisodeSummary, wall_clock_ms: u64) -> Self {
        MetricsRow {
            epoch,
            seed,
            algorithm: String::from(algorithm),
            mean_episode_reward: s.profit,
            costs: s.costs,
            fill_rate: s.fill_rate(),
            wasted_units: s.wasted,
            wall_clock_ms,
        }
    }
}

/// Least-squares slope of `ys` against `0, 1, …`.
pub fn ls_slope(ys: &[f64]) -> f64 {
    let n = ys.len() as f64;
    if ys.len() < 2 {
        return 0.0;
    }
    let xm = (n - 1.0) / 2.0;
    let ym = ys.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, y) in ys.iter().enumerate() {
        let dx = i as f64 - xm;
        num += dx * (y - ym);
        den += dx * dx;
    }
    num / den
}

fn window_flat(ys: &[f64], slope_tol: f64) -> bool {
    let mean = ys.iter().sum::<f64>() / ys.len() as f64;
    libm::fabs(ls_slope(ys)) <= slope_tol * libm::fabs(mean)
}

/// First epoch count `e` such that the window `rewards[e-window..e]` is flat and every
/// window ending in `e..=e+window` is flat too. `None` if no such `e` fits in the series.
///
/// Flat means `|slope| ≤ slope_tol·|window mean|`.
pub fn detect_convergence(rewards: &[f64], window: usize, slope_tol: f64) -> Option<usize> {
    if window < 2 || rewards.len() < 2 * window {
        return None;
    }
    let flat: Vec<bool> = (window..=rewards.len()).map(|e| window_flat(&rewards[e - window..e], slope_tol)).collect();
    // flat[i] refers to the window ending at e = i + window
    (0..flat.len()).find(|&i| i + window < flat.len() && flat[i..=i + window].iter().all(|&f| f)).map(|i| i + window)
}

/// Mean and sample standard deviation; a single value has zero spread.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (m, 0.0);
    }
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, libm::sqrt(v))
}

/// `(cost − best)/best·100`.
pub fn optimality_gap(cost: f64, best: f64) -> f64 {
    (cost - best) / best * 100.0
}

/// A value to be summarized, keyed by algorithm and sweep axis value.
#[derive(Debug, Clone, PartialEq)]
pub struct Observed {
    pub algorithm: String,
    pub axis_value: Option<f64>,
    pub seed: u64,
    pub reward: f64,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub algorithm: String,
    pub axis_value: Option<f64>,
    pub seeds: usize,
    pub reward_mean: f64,
    pub reward_std: f64,
    pub cost_mean: f64,
    pub cost_std: f64,
    /// Against the lowest mean cost at the same axis value.
    pub gap_percent: f64,
}

/// Per (algorithm, axis value): mean ± sample std over seeds and the cost gap.
/// Groups keep first-appearance order.
pub fn summarize(values: &[Observed]) -> Vec<SummaryRow> {
    let mut keys: Vec<(String, Option<f64>)> = Vec::new();
    for v in values {
        if !keys.iter().any(|(a, x)| *a == v.algorithm && *x == v.axis_value) {
            keys.push((v.algorithm.clone(), v.axis_value));
        }
    }
    let mut rows: Vec<SummaryRow> = keys
        .into_iter()
        .map(|(alg, axis)| {
            let group: Vec<&Observed> = values.iter().filter(|v| v.algorithm == alg && v.axis_value == axis).collect();
            let rewards: Vec<f64> = group.iter().map(|v| v.reward).collect();
            let costs: Vec<f64> = group.iter().map(|v| v.cost).collect();
            let (reward_mean, reward_std) = mean_std(&rewards);
            let (cost_mean, cost_std) = mean_std(&costs);
            SummaryRow { algorithm: alg, axis_value: axis, seeds: group.len(), reward_mean, reward_std, cost_mean, cost_std, gap_percent: 0.0 }
        })
        .collect();
    for i in 0..rows.len() {
        let best = rows
            .iter()
            .filter(|r| r.axis_value == rows[i].axis_value)
            .map(|r| r.cost_mean)
            .fold(f64::INFINITY, f64::min);
        rows[i].gap_percent = optimality_gap(rows[i].cost_mean, best);
    }
    rows
}

/// Ranks starting at 1, ties sharing their average rank.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = alloc::vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation (Pearson on average ranks). NaN when either side is constant.
pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    let (rx, ry) = (average_ranks(xs), average_ranks(ys));
    let n = rx.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / libm::sqrt(sxx * syy)
}
