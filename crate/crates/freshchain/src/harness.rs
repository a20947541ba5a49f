//! Experiment orchestration and CSV output.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use freshchain_core::agents::a3c::A3cTrainer;
use freshchain_core::agents::dqn::DqnAgent;
use freshchain_core::agents::ppo::PpoCentral;
use freshchain_core::agents::sac::SacAgent;
use freshchain_core::agents::ss::{ss_grid_tune, SsTuning};
use freshchain_core::agents::{
    evaluate, evaluate_policy, mix_seed, run_episode, ActionSpace, AgentError, EpisodeSummary, Learner, Policy,
    RandomPolicy,
};
use freshchain_core::env::{Scenario, SupplyChainEnv};
use freshchain_core::metrics::MetricsRow;
use freshchain_core::nn::MlpParams;
use freshchain_core::scenarios::{with_delta, with_demand_variance, with_lead_rate, with_retailers_replicated};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{Algorithm, Execution, ExperimentConfig, SweepAxis, SweepSpec};
use crate::parallel::{train_epoch_async, ThreadedExecutor};

pub const CSV_HEADER: &str = "epoch,seed,algorithm,mean_episode_reward,cost_purchase,cost_holding,cost_wastage,cost_shortage,cost_transport,fill_rate,wasted_units,wall_clock_ms";
pub const SWEEP_PREFIX: &str = "axis,axis_value";

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("seed {seed}, {algorithm}: {source}")]
    Agent { seed: u64, algorithm: &'static str, source: AgentError },
    #[error("{context}: {source}")]
    Io { context: String, source: std::io::Error },
    #[error("{0}")]
    Usage(String),
}

fn io_err(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> HarnessError {
    let context = context.into();
    move |source| HarnessError::Io { context, source }
}

/// Training rows plus one frozen-policy evaluation row per seed.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsLog {
    pub rows: Vec<MetricsRow>,
    pub evaluations: Vec<MetricsRow>,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub checkpoint_dir: Option<PathBuf>,
}

/// What a seed trains.
pub enum Runner {
    Learner(Box<dyn Learner>),
    A3c(Box<A3cTrainer>),
    /// Random and (s,S): one episode of the fixed policy per epoch.
    Fixed { policy: Box<dyn Policy>, tuning: Option<SsTuning> },
}

impl Runner {
    pub fn build(cfg: &ExperimentConfig, scenario: &Scenario, seed: u64) -> Result<Runner, AgentError> {
        let horizon = scenario.settings.horizon as u64;
        Ok(match cfg.algorithm {
            Algorithm::Dqn => Runner::Learner(Box::new(DqnAgent::new(scenario, cfg.dqn.clone(), cfg.epochs * horizon, seed)?)),
            Algorithm::Sac => Runner::Learner(Box::new(SacAgent::new(scenario, cfg.sac.clone(), seed)?)),
            Algorithm::PpoCentral => Runner::Learner(Box::new(PpoCentral::new(scenario, cfg.ppo.clone(), seed)?)),
            Algorithm::A3cDppo => {
                let mut a = cfg.a3c.clone();
                if cfg.workers > 0 {
                    a.workers = cfg.workers;
                }
                Runner::A3c(Box::new(A3cTrainer::new(scenario, a, seed)?))
            }
            Algorithm::Random => Runner::Fixed {
                policy: Box::new(RandomPolicy { space: ActionSpace::new(scenario, cfg.random.min_order_fraction) }),
                tuning: None,
            },
            Algorithm::Ss => {
                let t = ss_grid_tune(
                    scenario,
                    &cfg.ss.reorder_points,
                    &cfg.ss.order_up_to,
                    cfg.ss.units,
                    cfg.ss.tuning_episodes,
                    seed,
                )?;
                Runner::Fixed { policy: Box::new(t.policy.clone()), tuning: Some(t) }
            }
        })
    }

    fn train_epoch(
        &mut self,
        scenario: &Scenario,
        execution: Execution,
        seed: u64,
        epoch: u64,
        env: &mut Option<SupplyChainEnv>,
        rng: &mut ChaCha8Rng,
    ) -> Result<EpisodeSummary, AgentError> {
        match self {
            Runner::Learner(l) => l.train_epoch(epoch),
            Runner::A3c(t) => match execution {
                Execution::Sync => t.train_epoch_with(&mut ThreadedExecutor),
                Execution::Async => train_epoch_async(t),
            },
            Runner::Fixed { policy, .. } => {
                if env.is_none() {
                    *env = Some(SupplyChainEnv::new(scenario.clone(), seed)?);
                }
                let env = env.as_mut().expect("environment just created");
                run_episode(env, policy.as_mut(), mix_seed(seed, epoch, 0), rng)
            }
        }
    }

    fn evaluate(&mut self, scenario: &Scenario, episodes: u64, seed: u64) -> Result<Vec<EpisodeSummary>, AgentError> {
        match self {
            Runner::Learner(l) => evaluate(scenario, l.as_ref(), episodes, seed),
            Runner::A3c(t) => evaluate(scenario, t.as_ref(), episodes, seed),
            Runner::Fixed { policy, .. } => evaluate_policy(scenario, policy.as_mut(), episodes, seed),
        }
    }
}

/// Global A3C parameters with enough context to resume evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub algorithm: String,
    pub seed: u64,
    pub epoch: u64,
    pub config_hash: String,
    pub retail_actor: MlpParams,
    pub retail_critic: MlpParams,
    pub dc_actor: Option<MlpParams>,
    pub dc_critic: Option<MlpParams>,
}

impl Checkpoint {
    pub fn capture(t: &A3cTrainer, seed: u64, config_hash: &str) -> Self {
        Checkpoint {
            algorithm: "a3c_dppo".into(),
            seed,
            epoch: t.epoch,
            config_hash: config_hash.into(),
            retail_actor: t.retail.coordinator.actor.clone(),
            retail_critic: t.retail.coordinator.critic.clone(),
            dc_actor: t.dc.as_ref().map(|d| d.coordinator.actor.clone()),
            dc_critic: t.dc.as_ref().map(|d| d.coordinator.critic.clone()),
        }
    }

    /// Loads the parameters into a trainer built from the same configuration.
    pub fn restore(&self, t: &mut A3cTrainer) -> Result<(), HarnessError> {
        let shape_ok = self.retail_actor.same_shape(&t.retail.coordinator.actor)
            && self.retail_critic.same_shape(&t.retail.coordinator.critic)
            && match (&t.dc, &self.dc_actor, &self.dc_critic) {
                (Some(d), Some(a), Some(c)) => a.same_shape(&d.coordinator.actor) && c.same_shape(&d.coordinator.critic),
                (None, None, None) => true,
                _ => false,
            };
        if !shape_ok {
            return Err(HarnessError::Usage("checkpoint network shapes do not match the configuration".into()));
        }
        t.retail.coordinator.actor = self.retail_actor.clone();
        t.retail.coordinator.critic = self.retail_critic.clone();
        t.retail.coordinator.old_actor = self.retail_actor.clone();
        if let (Some(d), Some(a), Some(c)) = (&mut t.dc, &self.dc_actor, &self.dc_critic) {
            d.coordinator.actor = a.clone();
            d.coordinator.critic = c.clone();
            d.coordinator.old_actor = a.clone();
        }
        t.epoch = self.epoch;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), HarnessError> {
        let text = serde_json::to_string(self).map_err(|e| HarnessError::Usage(e.to_string()))?;
        std::fs::write(path, text).map_err(io_err(format!("writing {}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(io_err(format!("reading {}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| HarnessError::Usage(format!("{}: {e}", path.display())))
    }
}

/// FNV-1a over the configuration's debug form.
pub fn config_hash(cfg: &ExperimentConfig) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in format!("{cfg:?}").bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    format!("{h:016x}")
}

fn save_checkpoint(opts: &RunOptions, t: &A3cTrainer, seed: u64, hash: &str, name: &str) -> Result<(), HarnessError> {
    if let Some(dir) = &opts.checkpoint_dir {
        std::fs::create_dir_all(dir).map_err(io_err(format!("creating {}", dir.display())))?;
        Checkpoint::capture(t, seed, hash).save(&dir.join(name))?;
    }
    Ok(())
}

/// Trains and evaluates one seed; `on_row` sees every training row as it is produced.
pub fn run_seed(
    cfg: &ExperimentConfig,
    scenario: &Scenario,
    seed: u64,
    opts: &RunOptions,
    on_row: &mut dyn FnMut(&MetricsRow) -> Result<(), HarnessError>,
) -> Result<(Vec<MetricsRow>, MetricsRow), HarnessError> {
    let alg = cfg.algorithm.name();
    let wrap = |source| HarnessError::Agent { seed, algorithm: alg, source };
    let start = Instant::now();
    let hash = config_hash(cfg);
    let mut runner = Runner::build(cfg, scenario, seed).map_err(wrap)?;
    let mut env = None;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0, 0xF1));
    let mut rows = Vec::with_capacity(cfg.epochs as usize);
    for epoch in 0..cfg.epochs {
        let s = runner.train_epoch(scenario, cfg.execution, seed, epoch, &mut env, &mut rng).map_err(wrap)?;
        let row = MetricsRow::from_summary(epoch, seed, alg, &s, start.elapsed().as_millis() as u64);
        on_row(&row)?;
        rows.push(row);
        if let Runner::A3c(t) = &runner {
            if cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0 {
                save_checkpoint(opts, t, seed, &hash, &format!("a3c_seed{seed}_epoch{}.json", epoch + 1))?;
            }
        }
    }
    if let Runner::A3c(t) = &runner {
        save_checkpoint(opts, t, seed, &hash, &format!("a3c_seed{seed}.json"))?;
    }
    let evals = runner.evaluate(scenario, cfg.eval_episodes, seed).map_err(wrap)?;
    let eval = MetricsRow::from_summary(cfg.epochs, seed, alg, &EpisodeSummary::mean(&evals), start.elapsed().as_millis() as u64);
    Ok((rows, eval))
}

pub fn run_experiment(
    cfg: &ExperimentConfig,
    opts: &RunOptions,
    on_row: &mut dyn FnMut(&MetricsRow) -> Result<(), HarnessError>,
) -> Result<MetricsLog, HarnessError> {
    let mut log = MetricsLog::default();
    for &seed in &cfg.seeds {
        let (rows, eval) = run_seed(cfg, &cfg.scenario, seed, opts, on_row)?;
        log.rows.extend(rows);
        log.evaluations.push(eval);
    }
    Ok(log)
}

/// The configuration's scenario with one axis value substituted.
pub fn apply_axis(base: &Scenario, axis: SweepAxis, value: f64) -> Scenario {
    match axis {
        SweepAxis::DemandVariance => with_demand_variance(base, value),
        SweepAxis::LeadtimeRate => with_lead_rate(base, value),
        SweepAxis::PerishabilityDelta => with_delta(base, value),
        SweepAxis::TopologyScale => with_retailers_replicated(base, value as usize),
    }
}

pub fn run_sweep(
    cfg: &ExperimentConfig,
    sweep: &SweepSpec,
    opts: &RunOptions,
    on_row: &mut dyn FnMut(f64, &MetricsRow) -> Result<(), HarnessError>,
) -> Result<Vec<(f64, MetricsLog)>, HarnessError> {
    let mut out = Vec::with_capacity(sweep.values.len());
    for &v in &sweep.values {
        let mut point = cfg.clone();
        point.scenario = apply_axis(&cfg.scenario, sweep.axis, v);
        let log = run_experiment(&point, opts, &mut |r| on_row(v, r))?;
        out.push((v, log));
    }
    Ok(out)
}

pub fn csv_line(row: &MetricsRow) -> String {
    let c = &row.costs;
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{}",
        row.epoch,
        row.seed,
        row.algorithm,
        row.mean_episode_reward,
        c.purchase,
        c.holding,
        c.wastage,
        c.shortage,
        c.transport,
        row.fill_rate,
        row.wasted_units,
        row.wall_clock_ms
    )
}

/// Appends rows under the fixed header; sweep output carries the axis prefix.
pub struct CsvSink<W: Write> {
    out: W,
    axis: Option<&'static str>,
}

impl<W: Write> CsvSink<W> {
    pub fn new(mut out: W, axis: Option<SweepAxis>) -> std::io::Result<Self> {
        match axis {
            Some(_) => writeln!(out, "{SWEEP_PREFIX},{CSV_HEADER}")?,
            None => writeln!(out, "{CSV_HEADER}")?,
        }
        Ok(CsvSink { out, axis: axis.map(SweepAxis::name) })
    }

    pub fn write(&mut self, axis_value: Option<f64>, row: &MetricsRow) -> std::io::Result<()> {
        match (self.axis, axis_value) {
            (Some(a), Some(v)) => writeln!(self.out, "{a},{v},{}", csv_line(row)),
            _ => writeln!(self.out, "{}", csv_line(row)),
        }
    }

    pub fn flush(&mut self) -> std::io::Result<()> {
        self.out.flush()
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}
