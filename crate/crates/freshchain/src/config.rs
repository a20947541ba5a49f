//! TOML experiment configuration.
//!
//! The file mirrors the scenario tables plus one section per algorithm. Every
//! struct rejects unknown keys, and parse errors carry the dotted key path.

use std::path::Path;

use freshchain_core::agents::a3c::A3cConfig;
use freshchain_core::agents::dqn::DqnConfig;
use freshchain_core::agents::ppo::PpoConfig;
use freshchain_core::agents::sac::SacConfig;
use freshchain_core::agents::ss::SsUnits;
use freshchain_core::agents::DEFAULT_MIN_ORDER_FRACTION;
use freshchain_core::env::{DcSpec, EnvSettings, FarmSpec, FleetSpec, NodeProduct, ProductSpec, RetailerSpec, Scenario};
use freshchain_core::stochastic::{DemandModel, DistributionSpec, LeadTimeModel, WeekdaySchedule};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
}

fn invalid(path: impl Into<String>, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { path: path.into(), message: message.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[clap(rename_all = "snake_case")]
pub enum Algorithm {
    Ss,
    Dqn,
    Sac,
    PpoCentral,
    A3cDppo,
    Random,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Ss => "ss",
            Algorithm::Dqn => "dqn",
            Algorithm::Sac => "sac",
            Algorithm::PpoCentral => "ppo_central",
            Algorithm::A3cDppo => "a3c_dppo",
            Algorithm::Random => "random",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Execution {
    #[default]
    Sync,
    Async,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    DemandVariance,
    LeadtimeRate,
    PerishabilityDelta,
    TopologyScale,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::DemandVariance => "demand_variance",
            SweepAxis::LeadtimeRate => "leadtime_rate",
            SweepAxis::PerishabilityDelta => "perishability_delta",
            SweepAxis::TopologyScale => "topology_scale",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub algorithm: Algorithm,
    pub epochs: u64,
    pub seeds: Vec<u64>,
    #[serde(default = "default_eval_episodes")]
    pub eval_episodes: u64,
    /// A3C retailer workers; 0 means one per retailer.
    #[serde(default)]
    pub workers: usize,
    #[serde(default)]
    pub execution: Execution,
    /// Write an A3C checkpoint every this many epochs (0 = only at the end).
    #[serde(default)]
    pub checkpoint_every: u64,
}

fn default_eval_episodes() -> u64 {
    20
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SsSettings {
    pub reorder_points: Vec<f64>,
    pub order_up_to: Vec<f64>,
    pub units: SsUnits,
    pub tuning_episodes: u64,
}

impl Default for SsSettings {
    fn default() -> Self {
        let grid = |n: usize| (0..=n).map(|i| i as f64 / n as f64).collect();
        SsSettings { reorder_points: grid(10), order_up_to: grid(10), units: SsUnits::CapacityFraction, tuning_episodes: 50 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RandomSettings {
    pub min_order_fraction: f64,
}

impl Default for RandomSettings {
    fn default() -> Self {
        RandomSettings { min_order_fraction: DEFAULT_MIN_ORDER_FRACTION }
    }
}

/// Either three weekday blocks or seven explicit days.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScheduleEntry {
    Blocks(ScheduleBlocks),
    Days(ScheduleDays),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleBlocks {
    pub mon_wed: DistributionSpec,
    pub thu_fri: DistributionSpec,
    pub sat_sun: DistributionSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleDays {
    pub days: Vec<DistributionSpec>,
}

impl ScheduleEntry {
    fn schedule(&self) -> WeekdaySchedule {
        match self {
            ScheduleEntry::Blocks(b) => WeekdaySchedule::blocks(b.mon_wed.clone(), b.thu_fri.clone(), b.sat_sun.clone()),
            ScheduleEntry::Days(d) => WeekdaySchedule(d.days.clone()),
        }
    }

    fn from_schedule(s: &WeekdaySchedule) -> Self {
        let d = &s.0;
        if d.len() == 7 && d[0] == d[1] && d[1] == d[2] && d[3] == d[4] && d[5] == d[6] {
            ScheduleEntry::Blocks(ScheduleBlocks { mon_wed: d[0].clone(), thu_fri: d[3].clone(), sat_sun: d[5].clone() })
        } else {
            ScheduleEntry::Days(ScheduleDays { days: d.clone() })
        }
    }
}

/// A retailer's DC. A list is accepted so that multi-DC assignments are reported
/// as a topology error rather than a type error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DcAssignment {
    One(usize),
    Many(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DcEntry {
    pub name: String,
    pub farm: usize,
    pub distance_km: f64,
    /// Farm → DC.
    pub lead_time: DistributionSpec,
    pub products: Vec<NodeProduct>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetailerEntry {
    pub name: String,
    pub dc: DcAssignment,
    pub distance_km: f64,
    /// DC → retailer.
    pub lead_time: DistributionSpec,
    pub products: Vec<NodeProduct>,
    /// One schedule per product.
    pub demand: Vec<ScheduleEntry>,
}

/// The file as written.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub experiment: ExperimentSection,
    #[serde(default)]
    pub environment: EnvSettings,
    #[serde(default = "default_min_periods")]
    pub lead_time_min_periods: u32,
    pub fleet: FleetSpec,
    pub products: Vec<ProductSpec>,
    pub farms: Vec<FarmSpec>,
    pub dcs: Vec<DcEntry>,
    pub retailers: Vec<RetailerEntry>,
    #[serde(default)]
    pub a3c: A3cConfig,
    #[serde(default)]
    pub dqn: DqnConfig,
    #[serde(default)]
    pub sac: SacConfig,
    #[serde(default)]
    pub ppo: PpoConfig,
    #[serde(default)]
    pub ss: SsSettings,
    #[serde(default)]
    pub random: RandomSettings,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSpec>,
}

fn default_min_periods() -> u32 {
    1
}

/// Validated configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    pub algorithm: Algorithm,
    pub epochs: u64,
    pub seeds: Vec<u64>,
    pub eval_episodes: u64,
    pub workers: usize,
    pub execution: Execution,
    pub checkpoint_every: u64,
    pub a3c: A3cConfig,
    pub dqn: DqnConfig,
    pub sac: SacConfig,
    pub ppo: PpoConfig,
    pub ss: SsSettings,
    pub random: RandomSettings,
    pub sweep: Option<SweepSpec>,
}

impl ConfigFile {
    pub fn into_config(self) -> Result<ExperimentConfig, ConfigError> {
        let e = &self.experiment;
        if e.seeds.is_empty() {
            return Err(invalid("experiment.seeds", "at least one seed is required"));
        }
        if e.epochs == 0 {
            return Err(invalid("experiment.epochs", "must be at least 1"));
        }
        if e.eval_episodes == 0 {
            return Err(invalid("experiment.eval_episodes", "must be at least 1"));
        }
        let mut retailers = Vec::with_capacity(self.retailers.len());
        let mut schedules = Vec::with_capacity(self.retailers.len());
        let mut dc_leads = Vec::with_capacity(self.retailers.len());
        for (c, r) in self.retailers.iter().enumerate() {
            let dc = match &r.dc {
                DcAssignment::One(k) => *k,
                DcAssignment::Many(ks) if ks.len() == 1 => ks[0],
                DcAssignment::Many(ks) => {
                    return Err(invalid(
                        format!("retailers[{c}].dc"),
                        format!("C4: a retailer must be served by exactly one distribution center, got {}", ks.len()),
                    ))
                }
            };
            retailers.push(RetailerSpec { name: r.name.clone(), dc, distance_km: r.distance_km, products: r.products.clone() });
            schedules.push(r.demand.iter().map(ScheduleEntry::schedule).collect());
            dc_leads.push(r.lead_time.clone());
        }
        let scenario = Scenario {
            products: self.products,
            farms: self.farms,
            dcs: self
                .dcs
                .iter()
                .map(|d| DcSpec { name: d.name.clone(), farm: d.farm, distance_km: d.distance_km, products: d.products.clone() })
                .collect(),
            retailers,
            fleet: self.fleet,
            demand: DemandModel { schedules },
            lead_times: LeadTimeModel {
                farm_to_dc: self.dcs.iter().map(|d| d.lead_time.clone()).collect(),
                dc_to_retailer: dc_leads,
                min_periods: self.lead_time_min_periods,
            },
            settings: self.environment,
        };
        scenario.validate().map_err(|e| invalid("scenario", e.to_string()))?;
        self.a3c.validate().map_err(|e| invalid("a3c", e.to_string()))?;
        if let Some(s) = &self.sweep {
            if s.values.is_empty() {
                return Err(invalid("sweep.values", "at least one value is required"));
            }
            for (i, v) in s.values.iter().enumerate() {
                let ok = match s.axis {
                    SweepAxis::LeadtimeRate => *v > 0.0,
                    SweepAxis::DemandVariance => *v >= 0.0,
                    SweepAxis::PerishabilityDelta => (0.0..=1.0).contains(v),
                    SweepAxis::TopologyScale => *v >= 1.0 && v.fract() == 0.0,
                };
                if !ok || !v.is_finite() {
                    return Err(invalid(format!("sweep.values[{i}]"), format!("{v} is not valid for {}", s.axis.name())));
                }
            }
        }
        Ok(ExperimentConfig {
            scenario,
            algorithm: e.algorithm,
            epochs: e.epochs,
            seeds: e.seeds.clone(),
            eval_episodes: e.eval_episodes,
            workers: e.workers,
            execution: e.execution,
            checkpoint_every: e.checkpoint_every,
            a3c: self.a3c,
            dqn: self.dqn,
            sac: self.sac,
            ppo: self.ppo,
            ss: self.ss,
            random: self.random,
            sweep: self.sweep,
        })
    }

    /// File form of a scenario with the given experiment block.
    pub fn from_scenario(s: &Scenario, experiment: ExperimentSection) -> Self {
        ConfigFile {
            experiment,
            environment: s.settings.clone(),
            lead_time_min_periods: s.lead_times.min_periods,
            fleet: s.fleet.clone(),
            products: s.products.clone(),
            farms: s.farms.clone(),
            dcs: s
                .dcs
                .iter()
                .enumerate()
                .map(|(k, d)| DcEntry {
                    name: d.name.clone(),
                    farm: d.farm,
                    distance_km: d.distance_km,
                    lead_time: s.lead_times.farm_to_dc[k].clone(),
                    products: d.products.clone(),
                })
                .collect(),
            retailers: s
                .retailers
                .iter()
                .enumerate()
                .map(|(c, r)| RetailerEntry {
                    name: r.name.clone(),
                    dc: DcAssignment::One(r.dc),
                    distance_km: r.distance_km,
                    lead_time: s.lead_times.dc_to_retailer[c].clone(),
                    products: r.products.clone(),
                    demand: s.demand.schedules[c].iter().map(ScheduleEntry::from_schedule).collect(),
                })
                .collect(),
            a3c: A3cConfig::default(),
            dqn: DqnConfig::default(),
            sac: SacConfig::default(),
            ppo: PpoConfig::default(),
            ss: SsSettings::default(),
            random: RandomSettings::default(),
            sweep: None,
        }
    }
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let de = toml::Deserializer::new(text);
    let file: ConfigFile = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        ConfigError::Parse { path: if path == "." { "<root>".into() } else { path }, message: inner.message().to_string() }
    })?;
    file.into_config()
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io { path: path.display().to_string(), source: e })?;
    parse_config(&text)
}
