//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs as a plain program (`harness = false`). Set `ACCEPTANCE_ONLY=1,5,7` to run
//! a subset. The process fails when a criterion outside `KNOWN_RED` fails.

use std::path::PathBuf;
use std::process::Command;
use std::time::Instant;

use freshchain::config::{load_config, Algorithm, ExperimentConfig};
use freshchain::harness::{run_experiment, RunOptions};
use freshchain_core::agents::a3c::{A3cConfig, A3cTrainer, SequentialExecutor};
use freshchain_core::agents::ppo::{clip_ratio, clipped_objective};
use freshchain_core::agents::ss::{ss_grid_tune, SsPolicy, SsUnits};
use freshchain_core::agents::{evaluate_policy, EpisodeSummary};
use freshchain_core::env::{
    Action, ConstraintMode, CostBreakdown, FixedCostMode, NodeId, NodeProduct, Scenario, SupplyChainEnv, TransportMode,
};
use freshchain_core::metrics::spearman;
use freshchain_core::nn::{
    backward, ema_blend, forward, gaussian_log_density, init_network, log_prob_gradient, squashed_log_prob,
    squashed_log_prob_reparam_gradient, Activation, Batch, MlpParams, OptimizerSpec, OutputHead,
};
use freshchain_core::scenarios::{paper_default, with_delta, with_lead_rate};
use freshchain_core::stochastic::{DemandModel, DistributionSpec, LeadTimeModel, WeekdaySchedule};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Criteria left red on purpose; see the README for the measurements.
const KNOWN_RED: &[u32] = &[9];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn config_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn default_config() -> ExperimentConfig {
    load_config(&config_path("paper-default.toml")).unwrap()
}

// ---------------------------------------------------------------- 1

const FD_H: f64 = 1e-5;

fn random_batch(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Batch {
    Batch::from_flat(rows, cols, (0..rows * cols).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
}

fn fd_error(params: &MlpParams, analytic: &[f64], rng: &mut ChaCha8Rng, loss: impl Fn(&MlpParams) -> f64) -> f64 {
    let n = params.param_count();
    let mut coords: Vec<usize> = (0..120).map(|_| rng.random_range(0..n)).collect();
    coords.extend(n - params.log_std.len()..n);
    let (mut diff, mut na, mut nn) = (0.0, 0.0, 0.0);
    for c in coords {
        let mut plus = params.clone();
        *plus.values_mut().nth(c).unwrap() += FD_H;
        let mut minus = params.clone();
        *minus.values_mut().nth(c).unwrap() -= FD_H;
        let numeric = (loss(&plus) - loss(&minus)) / (2.0 * FD_H);
        diff += (analytic[c] - numeric).powi(2);
        na += analytic[c].powi(2);
        nn += numeric * numeric;
    }
    let d = na.sqrt().max(nn.sqrt());
    if d == 0.0 {
        0.0
    } else {
        diff.sqrt() / d
    }
}

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = [0.0f64; 3];
    let draws = 100;
    for draw in 0..draws {
        let n_in = rng.random_range(1..8);
        let n_out = rng.random_range(1..4);
        let rows = rng.random_range(1..4);
        let act = if draw % 2 == 0 { Activation::Tanh } else { Activation::Relu };

        let p = init_network(&[n_in, 64, 128, n_out], act, OutputHead::Linear, 9000 + draw).unwrap();
        let x = random_batch(&mut rng, rows, n_in, 2.0);
        let up = random_batch(&mut rng, rows, n_out, 1.0);
        let (_, cache) = forward(&p, &x).unwrap();
        let g: Vec<f64> = backward(&p, &cache, &up).unwrap().values().copied().collect();
        worst[0] = worst[0].max(fd_error(&p, &g, &mut rng, |q| {
            forward(q, &x).unwrap().0.data().iter().zip(up.data()).map(|(a, b)| a * b).sum()
        }));

        let mut p = init_network(&[n_in, 64, 128, n_out], act, OutputHead::Gaussian, 9500 + draw).unwrap();
        for s in &mut p.log_std {
            *s = rng.random_range(-1.0..0.3);
        }
        let a = random_batch(&mut rng, rows, n_out, 1.5);
        let coefs: Vec<f64> = (0..rows).map(|_| rng.random_range(-2.0..2.0)).collect();
        let g: Vec<f64> = log_prob_gradient(&p, &x, &a, &coefs).unwrap().0.values().copied().collect();
        worst[1] = worst[1].max(fd_error(&p, &g, &mut rng, |q| {
            let (m, _) = forward(q, &x).unwrap();
            (0..rows).map(|r| coefs[r] * gaussian_log_density(m.row(r), &q.log_std, a.row(r))).sum()
        }));

        let coefs: Vec<f64> = coefs.iter().map(|c| c.abs() + 0.1).collect();
        let g: Vec<f64> = squashed_log_prob_reparam_gradient(&p, &x, &a, &coefs).unwrap().0.values().copied().collect();
        worst[2] = worst[2].max(fd_error(&p, &g, &mut rng, |q| {
            let (m, _) = forward(q, &x).unwrap();
            (0..rows)
                .map(|r| {
                    let raw: Vec<f64> = (0..n_out).map(|j| m.row(r)[j] + q.log_std[j].exp() * a.row(r)[j]).collect();
                    coefs[r] * squashed_log_prob(m.row(r), &q.log_std, &raw)
                })
                .sum()
        }));
    }
    let max = worst.iter().cloned().fold(0.0, f64::max);
    outcome(
        max < 1e-4,
        format!(
            "{draws} draws each; worst relative error backward {:.1e}, log-prob {:.1e}, squashed reparam {:.1e}",
            worst[0], worst[1], worst[2]
        ),
    )
}

// ---------------------------------------------------------------- 2

fn criterion_2() -> Outcome {
    let n = 100_000;
    let cases = [
        ("N(12,2)", DistributionSpec::Normal { mu: 12.0, sigma: 2.0 }, 12.0, 4.0),
        ("Gamma(2,10)", DistributionSpec::Gamma { shape: 2.0, scale: 10.0 }, 20.0, 200.0),
        ("Weibull(1,0.5)", DistributionSpec::Weibull { shape: 1.0, scale: 0.5 }, 0.5, 0.25),
        ("Exp(0.1)", DistributionSpec::Exponential { rate: 0.1 }, 10.0, 100.0),
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for (i, (name, spec, mean, var)) in cases.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(77 + i as u64);
        let m = (0..n).map(|_| spec.sample_raw(&mut rng)).sum::<f64>() / n as f64;
        let z = (m - mean) / (var / n as f64).sqrt();
        pass &= z.abs() <= 3.0;
        parts.push(format!("{name} {m:.4} (z {z:+.2})"));
    }
    outcome(pass, parts.join(", "))
}

// ---------------------------------------------------------------- 3

fn random_action(env: &SupplyChainEnv, rng: &mut ChaCha8Rng) -> Action {
    let s = env.scenario();
    let mut a = Action::for_scenario(s);
    for node in s.nodes().collect::<Vec<_>>() {
        for p in 0..s.products.len() {
            a.node_mut(node)[p] = rng.random_range(0.0..1.5) * s.capacity(node, p);
        }
    }
    a
}

fn criterion_3() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut violations = 0;
    for seed in 0..3 {
        let mut s = paper_default();
        s.settings.horizon = 1000;
        let mut env = SupplyChainEnv::new(s, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 500);
        for _ in 0..1000 {
            let a = random_action(&env, &mut rng);
            let r = env.step(&a).unwrap();
            let sc = env.scenario();
            for node in sc.nodes() {
                for p in 0..sc.products.len() {
                    let f = &r.flows[sc.node_index(node)][p];
                    let balance = f.start_on_hand + f.arrived - f.outbound - f.sold - f.purged - f.decayed;
                    worst = worst.max((balance - f.end_on_hand).abs());
                    worst = worst.max((f.end_on_hand - env.on_hand(node, p)).abs());
                }
            }
            if !(r.constraints.c1 && r.constraints.c2) {
                violations += 1;
            }
        }
    }
    outcome(worst <= 1e-9 && violations == 0, format!("3 × 1000 steps; max balance error {worst:.1e}; C1/C2 violations {violations}"))
}

// ---------------------------------------------------------------- 4

fn single_retailer(demand: DistributionSpec, lead: DistributionSpec, min_periods: u32) -> Scenario {
    let mut s = paper_default();
    s.products.truncate(1);
    s.dcs[0].products.truncate(1);
    s.retailers.truncate(1);
    s.retailers[0].products.truncate(1);
    s.demand = DemandModel { schedules: vec![vec![WeekdaySchedule::constant(demand)]] };
    s.lead_times = LeadTimeModel { farm_to_dc: vec![lead.clone()], dc_to_retailer: vec![lead], min_periods };
    s
}

fn criterion_4() -> Outcome {
    let mut bad = 0;
    let mut checked = 0;
    for lead in [1u32, 3, 5] {
        let mut s = single_retailer(
            DistributionSpec::Deterministic { value: 1.0 },
            DistributionSpec::Deterministic { value: lead as f64 },
            1,
        );
        s.settings.horizon = 40;
        s.settings.handling_loss = 0.0;
        let mut env = SupplyChainEnv::new(s, 3).unwrap();
        let mut placed = Vec::new();
        let mut arrived = Vec::new();
        for t in 0..40u32 {
            let mut a = Action::zeros(1, 1, 1);
            a.dc[0][0] = if t < 30 { 1.0 + t as f64 } else { 0.0 };
            let r = env.step(&a).unwrap();
            if r.flows[0][0].ordered > 0.0 {
                placed.push((t, r.flows[0][0].ordered));
            }
            if r.flows[0][0].arrived > 0.0 {
                arrived.push((t, r.flows[0][0].arrived));
            }
        }
        let due: Vec<_> = placed.iter().filter(|(t, _)| t + lead < 40).collect();
        bad += usize::from(due.len() != arrived.len());
        for ((tp, qp), (ta, qa)) in due.iter().zip(&arrived) {
            checked += 1;
            bad += usize::from(*ta != tp + lead || (qp - qa).abs() > 1e-9);
        }
    }
    let mut s = paper_default();
    s.settings.mode = ConstraintMode::Strict;
    let mut env = SupplyChainEnv::new(s.clone(), 2).unwrap();
    env.set_on_hand(NodeId::Dc(0), 1, 600.0);
    let r = env.step(&Action::for_scenario(&s)).unwrap();
    let strict_ok = !r.constraints.c1 && r.reward == 0.0 && r.nodes.iter().map(|n| n.profit()).sum::<f64>() != 0.0;
    outcome(
        bad == 0 && strict_ok,
        format!("{checked} arrivals at exactly t+L for L in {{1,3,5}}, mismatches {bad}; strict-mode C1 violation gives reward {}", r.reward),
    )
}

// ---------------------------------------------------------------- 5

const F_FIXED: f64 = 2.0;
const HOLD: f64 = 0.5;
const SHORT: f64 = 10.0;

/// One retailer, one product, zero lead, demand uniform on {0,1,2}; every unit
/// shipped costs 1 in transport and each order pays `F_FIXED`.
fn tiny_instance() -> Scenario {
    let mut s = single_retailer(
        DistributionSpec::Discrete { values: vec![0.0, 1.0, 2.0], weights: vec![1.0, 1.0, 1.0] },
        DistributionSpec::Deterministic { value: 0.0 },
        0,
    );
    s.products[0].delta = 0.0;
    s.products[0].shelf_life = 10;
    s.dcs[0].distance_km = 1.0;
    s.dcs[0].products[0] = NodeProduct {
        initial_inventory: 100.0,
        unit_purchase_price: 0.0,
        unit_sale_price: 0.0,
        unit_holding_cost: 0.0,
        unit_shortage_cost: 0.0,
        unit_wastage_cost: 0.0,
        fixed_ordering_price: 0.0,
        capacity: 100.0,
    };
    s.retailers[0].distance_km = 1.0;
    s.retailers[0].products[0] = NodeProduct {
        initial_inventory: 1.0,
        unit_purchase_price: 0.0,
        unit_sale_price: 0.0,
        unit_holding_cost: HOLD,
        unit_shortage_cost: SHORT,
        unit_wastage_cost: 0.0,
        fixed_ordering_price: F_FIXED,
        capacity: 4.0,
    };
    s.fleet.vehicles = 1;
    s.fleet.vehicle_capacity = 10.0;
    s.fleet.loading_cost = 5.0;
    s.fleet.unloading_cost = 5.0;
    s.fleet.fuel_cost = 1.0;
    s.fleet.fixed_cost_to_dc = 0.0;
    s.fleet.fixed_cost_to_retailer = 0.0;
    s.settings.horizon = 3;
    s.settings.mode = ConstraintMode::Clip;
    s.settings.transport_mode = TransportMode::Literal;
    s.settings.fixed_cost_mode = FixedCostMode::NodeTable;
    s.settings.handling_loss = 0.0;
    s
}

/// Exact expected cost of the (s,S) rule from stock `v` with `periods` left.
fn dp_cost(s: u32, big_s: u32, v: u32, periods: u32) -> f64 {
    if periods == 0 {
        return 0.0;
    }
    let q = if v < s { big_s - v } else { 0 };
    let stock = v + q;
    let mut total = 0.0;
    for d in 0..=2u32 {
        let sold = d.min(stock);
        let left = stock - sold;
        let order = if q > 0 { F_FIXED + q as f64 } else { 0.0 };
        let c = order + HOLD * left as f64 + SHORT * (d - sold) as f64;
        total += (c + dp_cost(s, big_s, left, periods - 1)) / 3.0;
    }
    total
}

fn mc_cost(scenario: &Scenario, s: u32, big_s: u32, episodes: u64) -> (f64, f64) {
    let mut p = SsPolicy::uniform(scenario, s as f64, big_s as f64, SsUnits::Absolute);
    let runs = evaluate_policy(scenario, &mut p, episodes, 2024).unwrap();
    let xs: Vec<f64> = runs.iter().map(|r| r.costs.total()).collect();
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

fn criterion_5() -> Outcome {
    let scenario = tiny_instance();
    // Same visiting order and tie rule as the tuner: ascending S, then s, strict improvement.
    let mut pairs = Vec::new();
    for big_s in 0..=4u32 {
        for s in 0..=big_s {
            pairs.push((s, big_s));
        }
    }
    let exact: Vec<f64> = pairs.iter().map(|&(s, b)| dp_cost(s, b, 1, 3)).collect();
    let mut best = 0;
    for i in 1..pairs.len() {
        if exact[i] < exact[best] - 1e-12 {
            best = i;
        }
    }
    let runner_up = exact
        .iter()
        .filter(|&&c| c > exact[best] + 1e-12)
        .cloned()
        .fold(f64::INFINITY, f64::min);

    let (s_opt, b_opt) = pairs[best];
    let mut pass = true;
    let mut parts = vec![format!("DP-optimal (s,S)=({s_opt},{b_opt}) cost {:.4}, next best {:.4}", exact[best], runner_up)];
    for (s, b) in [(s_opt, b_opt), (2, 4)] {
        let dp = dp_cost(s, b, 1, 3);
        let (m, se) = mc_cost(&scenario, s, b, 100_000);
        let z = (m - dp) / se;
        pass &= z.abs() <= 3.0;
        parts.push(format!("({s},{b}) DP {dp:.4} vs MC {m:.4} ± {se:.4} (z {z:+.2})"));
    }
    let grid: Vec<f64> = (0..=4).map(f64::from).collect();
    let tuned = ss_grid_tune(&scenario, &grid, &grid, SsUnits::Absolute, 20_000, 5).unwrap();
    let got = (tuned.best.reorder_point as u32, tuned.best.order_up_to as u32);
    pass &= got == (s_opt, b_opt);
    parts.push(format!("ss_grid_tune -> ({},{})", got.0, got.1));
    outcome(pass, parts.join("; "))
}

// ---------------------------------------------------------------- 6

fn criterion_6() -> Outcome {
    let mut pass = true;
    for i in 0..=300 {
        let eta = i as f64 * 0.01;
        let want = eta.clamp(0.8, 1.2);
        pass &= clip_ratio(eta, 0.2) == want;
        if (0.8..=1.2).contains(&eta) {
            pass &= clip_ratio(eta, 0.2) == eta;
        }
        for adv in [-1.5, 2.0] {
            pass &= clipped_objective(eta, adv, Some(0.2)) == f64::min(eta * adv, want * adv);
        }
    }
    let clip_ok = pass;

    let a = init_network(&[4, 8, 2], Activation::Tanh, OutputHead::Gaussian, 1).unwrap();
    let b = init_network(&[4, 8, 2], Activation::Tanh, OutputHead::Gaussian, 2).unwrap();
    let ema_ok = ema_blend(&a, &b, 1.0).unwrap() == a;

    let s = paper_default();
    let cfg = A3cConfig { tau: 1.0, ..A3cConfig::default() };
    let mut frozen = A3cTrainer::new(&s, cfg, 3).unwrap();
    let before = frozen.retail.coordinator.actor.clone();
    frozen.train_epoch_with(&mut SequentialExecutor).unwrap();
    let tau_ok = frozen.retail.coordinator.actor == before;

    let mut t = A3cTrainer::new(&s, A3cConfig::default(), 4).unwrap();
    t.train_epoch_with(&mut SequentialExecutor).unwrap();
    t.train_epoch_with(&mut SequentialExecutor).unwrap();
    let mut bcast_ok = true;
    let tiers = std::iter::once(&t.retail).chain(t.dc.as_ref());
    for tier in tiers {
        let g = &tier.coordinator;
        for w in &tier.workers {
            bcast_ok &= w.actor == g.actor && w.critic == g.critic && w.last_sync == g.updates;
        }
    }
    let filled = !t.retail.coordinator.acc_actor.is_zero();
    t.begin_epoch();
    let zero_ok = filled
        && t.retail.coordinator.acc_actor.is_zero()
        && t.retail.coordinator.acc_critic.is_zero()
        && t.dc.as_ref().is_none_or(|d| d.coordinator.acc_actor.is_zero() && d.coordinator.acc_critic.is_zero());
    outcome(
        clip_ok && ema_ok && tau_ok && bcast_ok && zero_ok,
        format!("clip {clip_ok}, tau=1 identity {ema_ok} (trainer frozen {tau_ok}), broadcast exact {bcast_ok}, accumulators zeroed {zero_ok}"),
    )
}

// ---------------------------------------------------------------- 7

fn criterion_7() -> Outcome {
    let scenario = paper_default();
    let (lr_a, lr_c) = (1e-2, 1e-2);
    let cfg = A3cConfig {
        workers: 1,
        dc_tier: false,
        clip: None,
        tau: 1e-12,
        ppo_epochs: 0,
        max_grad_norm: 0.0,
        actor_optimizer: OptimizerSpec::Sgd { learning_rate: lr_a },
        critic_optimizer: OptimizerSpec::Sgd { learning_rate: lr_c },
        ..A3cConfig::default()
    };
    let gamma = cfg.gamma;
    let mut t = A3cTrainer::new(&scenario, cfg, 8).unwrap();
    t.begin_epoch();
    let theta = t.retail.coordinator.actor.clone();
    let phi = t.retail.coordinator.critic.clone();
    let traj = t.retail.workers[0].local_collect(30, None).unwrap();
    let grads = t.retail.workers[0].local_gradients(&traj).unwrap();
    let report = t.retail.finish_epoch(vec![Ok((traj.clone(), grads))]).unwrap();

    // Plain actor-critic step from forward/backward primitives only.
    let n = traj.steps.len();
    let rows = |f: &dyn Fn(usize) -> Vec<f64>| -> Vec<Vec<f64>> { (0..n).map(f).collect() };
    let states = Batch::from_rows(&rows(&|i| traj.steps[i].state.clone())).unwrap();
    let next = Batch::from_rows(&rows(&|i| traj.steps[i].next_state.clone())).unwrap();
    let (v, vcache) = forward(&phi, &states).unwrap();
    let (nv, _) = forward(&phi, &next).unwrap();
    let adv: Vec<f64> = (0..n)
        .map(|i| {
            let s = &traj.steps[i];
            let boot = if s.done { 0.0 } else { gamma * nv.row(i)[0] };
            s.reward + boot - v.row(i)[0]
        })
        .collect();
    let (mean, acache) = forward(&theta, &states).unwrap();
    let m = theta.output_size();
    let mut up = Batch::zeros(n, m);
    let mut dlog_std = vec![0.0; m];
    for i in 0..n {
        let a = &traj.steps[i].raw_action;
        for j in 0..m {
            let sd = theta.log_std[j].exp();
            let z = (a[j] - mean.row(i)[j]) / sd;
            up.row_mut(i)[j] = adv[i] / n as f64 * z / sd;
            dlog_std[j] += adv[i] / n as f64 * (z * z - 1.0);
        }
    }
    let mut ga = backward(&theta, &acache, &up).unwrap();
    let k = ga.values().count();
    for (j, g) in ga.values_mut().skip(k - m).enumerate() {
        *g = dlog_std[j];
    }
    let cup = Batch::from_flat(n, 1, adv.iter().map(|a| a / n as f64).collect()).unwrap();
    let gc = backward(&phi, &vcache, &cup).unwrap();
    let mut want_a = theta.clone();
    for (p, g) in want_a.values_mut().zip(ga.values()) {
        *p += lr_a * g;
    }
    let mut want_c = phi.clone();
    for (p, g) in want_c.values_mut().zip(gc.values()) {
        *p += lr_c * g;
    }
    let got_a = &t.retail.coordinator.actor;
    let got_c = &t.retail.coordinator.critic;
    let da = got_a.max_abs_diff(&want_a).unwrap();
    let dc = got_c.max_abs_diff(&want_c).unwrap();
    let moved = got_a.max_abs_diff(&theta).unwrap().max(got_c.max_abs_diff(&phi).unwrap());
    outcome(
        da <= 1e-12 && dc <= 1e-12 && report.weights == [1.0] && moved > 1e-6,
        format!("w = {:?}; max |Δ| actor {da:.1e}, critic {dc:.1e}; step size {moved:.2e}", report.weights),
    )
}

// ---------------------------------------------------------------- 8

fn final_mean(rows: &[freshchain_core::metrics::MetricsRow], seed: u64, last: usize) -> f64 {
    let xs: Vec<f64> = rows.iter().filter(|r| r.seed == seed).map(|r| r.mean_episode_reward).collect();
    let tail = &xs[xs.len().saturating_sub(last)..];
    tail.iter().sum::<f64>() / tail.len() as f64
}

fn criterion_8() -> Outcome {
    let base = default_config();
    let seeds = base.seeds.clone();
    let mut means = Vec::new();
    let mut times = Vec::new();
    for alg in [Algorithm::A3cDppo, Algorithm::Dqn, Algorithm::Random] {
        let mut cfg = base.clone();
        cfg.algorithm = alg;
        let t0 = Instant::now();
        let log = run_experiment(&cfg, &RunOptions::default(), &mut |_| Ok(())).unwrap();
        times.push(t0.elapsed().as_secs());
        means.push(seeds.iter().map(|&s| final_mean(&log.rows, s, 50)).collect::<Vec<_>>());
    }
    let (a3c, dqn, random) = (&means[0], &means[1], &means[2]);
    let beats_random = (0..seeds.len()).filter(|&i| a3c[i] - random[i] >= 0.5 * random[i].abs()).count();
    let beats_dqn = (0..seeds.len()).filter(|&i| a3c[i] > dqn[i]).count();
    for (i, s) in seeds.iter().enumerate() {
        println!("        seed {s}: a3c {:.0}, dqn {:.0}, random {:.0}", a3c[i], dqn[i], random[i]);
    }
    outcome(
        beats_random == seeds.len() && beats_dqn + 1 >= seeds.len(),
        format!(
            "{} epochs; a3c ≥ random + 50% in {beats_random}/{n}, a3c > dqn in {beats_dqn}/{n}; wall clock a3c {}s, dqn {}s, random {}s",
            base.epochs,
            times[0],
            times[1],
            times[2],
            n = seeds.len()
        ),
    )
}

// ---------------------------------------------------------------- 9, 10

fn eval_costs(s: &Scenario, levels: (f64, f64), seed: u64) -> CostBreakdown {
    let mut p = SsPolicy::uniform(s, levels.0, levels.1, SsUnits::CapacityFraction);
    EpisodeSummary::mean(&evaluate_policy(s, &mut p, 20, seed).unwrap()).costs
}

fn tuned_levels(cfg: &ExperimentConfig) -> (f64, f64) {
    let t = ss_grid_tune(&cfg.scenario, &cfg.ss.reorder_points, &cfg.ss.order_up_to, cfg.ss.units, cfg.ss.tuning_episodes, 1).unwrap();
    (t.best.reorder_point, t.best.order_up_to)
}

const REFERENCE_LEVELS: (f64, f64) = (0.2, 0.5);

fn lead_trend(base: &Scenario, levels: (f64, f64)) -> (f64, Vec<f64>) {
    let rates = [0.1, 0.5, 1.0, 1.5, 2.0];
    let mut lead = Vec::new();
    let mut cost = Vec::new();
    let mut means = Vec::new();
    for rate in rates {
        let s = with_lead_rate(base, rate);
        let xs: Vec<f64> = (1..=5).map(|seed| eval_costs(&s, levels, seed).inventory_total()).collect();
        means.push(xs.iter().sum::<f64>() / 5.0);
        for x in xs {
            lead.push(1.0 / rate);
            cost.push(x);
        }
    }
    (spearman(&lead, &cost), means)
}

fn criterion_9() -> Outcome {
    let cfg = default_config();
    let tuned = tuned_levels(&cfg);
    let (rho, means) = lead_trend(&cfg.scenario, tuned);
    let (rho_ref, means_ref) = lead_trend(&cfg.scenario, REFERENCE_LEVELS);
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.0}")).collect::<Vec<_>>().join("/");
    outcome(
        rho > 0.9 && means.windows(2).all(|w| w[1] < w[0]),
        format!(
            "tuned (s,S)={tuned:?}: cost by λ {} Spearman(cost, mean lead) {rho:.3}; reference {REFERENCE_LEVELS:?}: {} Spearman {rho_ref:.3}",
            fmt(&means),
            fmt(&means_ref)
        ),
    )
}

fn delta_trend(base: &Scenario, levels: (f64, f64)) -> (bool, String) {
    let deltas = [0.05, 0.10, 0.15, 0.20];
    let comps: Vec<CostBreakdown> = deltas
        .iter()
        .map(|&d| {
            let s = with_delta(base, d);
            let cs: Vec<CostBreakdown> = (1..=5).map(|seed| eval_costs(&s, levels, seed)).collect();
            let mut m = CostBreakdown::default();
            for c in &cs {
                m.add(c);
            }
            freshchain_core::agents::scale_costs(&m, 1.0 / cs.len() as f64)
        })
        .collect();
    let get = |c: &CostBreakdown, k: usize| [c.purchase, c.holding, c.wastage, c.shortage, c.transport][k];
    let growth = |k: usize| {
        let (a, b) = (get(&comps[0], k), get(&comps[3], k));
        if a == 0.0 {
            0.0
        } else {
            (b - a) / a.abs()
        }
    };
    let g: Vec<f64> = (0..5).map(growth).collect();
    let monotone = comps.windows(2).all(|w| w[1].wastage >= w[0].wastage);
    let fastest = (0..5).filter(|&k| k != 2).all(|k| g[2] > g[k]);
    let names = ["purchase", "holding", "wastage", "shortage", "transport"];
    let detail = format!(
        "wastage {} ; growth {}",
        comps.iter().map(|c| format!("{:.2}", c.wastage)).collect::<Vec<_>>().join("/"),
        names.iter().zip(&g).map(|(n, x)| format!("{n} {:+.1}%", 100.0 * x)).collect::<Vec<_>>().join(", ")
    );
    (monotone && fastest, detail)
}

fn criterion_10() -> Outcome {
    let cfg = default_config();
    let tuned = tuned_levels(&cfg);
    let (ok, detail) = delta_trend(&cfg.scenario, tuned);
    let (ok_ref, detail_ref) = delta_trend(&cfg.scenario, REFERENCE_LEVELS);
    println!("        reference {REFERENCE_LEVELS:?}: {} ({detail_ref})", if ok_ref { "holds" } else { "does not hold" });
    outcome(ok, format!("tuned (s,S)={tuned:?}: {detail}"))
}

// ---------------------------------------------------------------- 11

fn criterion_11() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let config = config_path("paper-default.toml");
    let run = |name: &str| -> Option<(String, String)> {
        let out = dir.path().join(name);
        let status = Command::new(env!("CARGO_BIN_EXE_freshchain"))
            .args(["train", "--config", config.to_str()?, "--sync", "--seed", "42", "--epochs", "5", "--out", out.to_str()?])
            .output()
            .ok()?;
        if !status.status.success() {
            return None;
        }
        let strip = |text: String| -> String {
            text.lines().map(|l| l.rsplit_once(',').map_or(l, |(head, _)| head)).collect::<Vec<_>>().join("\n")
        };
        Some((
            strip(std::fs::read_to_string(&out).ok()?),
            strip(std::fs::read_to_string(out.with_extension("eval.csv")).ok()?),
        ))
    };
    match (run("a.csv"), run("b.csv")) {
        (Some(a), Some(b)) => outcome(
            a == b && a.0.lines().count() == 6,
            format!("two 5-epoch a3c_dppo runs: training CSV identical {}, eval CSV identical {}", a.0 == b.0, a.1 == b.1),
        ),
        _ => outcome(false, "CLI run failed"),
    }
}

// ---------------------------------------------------------------- 12

fn criterion_12() -> Outcome {
    let cfg = load_config(&config_path("paper-large.toml")).unwrap();
    let t0 = Instant::now();
    match run_experiment(&cfg, &RunOptions::default(), &mut |_| Ok(())) {
        Ok(log) => {
            let finite = log.rows.iter().chain(&log.evaluations).all(|r| {
                let c = &r.costs;
                [r.mean_episode_reward, c.purchase, c.holding, c.wastage, c.shortage, c.transport, r.fill_rate, r.wasted_units]
                    .iter()
                    .all(|v| v.is_finite())
            });
            let epochs_ok = log.rows.iter().enumerate().all(|(i, r)| r.epoch == i as u64);
            outcome(
                finite && epochs_ok && log.rows.len() == 20,
                format!(
                    "3 farms / 4 DCs / 10 retailers, {} epochs of {} in {:.1}s; all metrics finite {finite}",
                    log.rows.len(),
                    cfg.algorithm.name(),
                    t0.elapsed().as_secs_f64()
                ),
            )
        }
        Err(e) => outcome(false, format!("training failed: {e}")),
    }
}

fn main() {
    let criteria: [(u32, &str, fn() -> Outcome); 12] = [
        (1, "gradient correctness", criterion_1),
        (2, "sampler statistics", criterion_2),
        (3, "conservation", criterion_3),
        (4, "FIFO and lead-time exactness", criterion_4),
        (5, "small-instance (s,S) oracle", criterion_5),
        (6, "clip and EMA algebra", criterion_6),
        (7, "degenerate equivalence", criterion_7),
        (8, "learning", criterion_8),
        (9, "lead-time trend", criterion_9),
        (10, "perishability trend", criterion_10),
        (11, "determinism", criterion_11),
        (12, "scalability smoke", criterion_12),
    ];
    let only: Option<Vec<u32>> =
        std::env::var("ACCEPTANCE_ONLY").ok().map(|v| v.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let mut unexpected = Vec::new();
    for (id, name, run) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let t0 = Instant::now();
        let o = run();
        let tag = if o.pass { "PASS" } else { "FAIL" };
        let note = if !o.pass && KNOWN_RED.contains(&id) { " [known red]" } else { "" };
        println!("{tag} {id:>2} {name}{note} ({:.1}s): {}", t0.elapsed().as_secs_f64(), o.detail);
        if !o.pass && !KNOWN_RED.contains(&id) {
            unexpected.push(id);
        }
    }
    if !unexpected.is_empty() {
        eprintln!("unexpected failures: {unexpected:?}");
        std::process::exit(1);
    }
}
