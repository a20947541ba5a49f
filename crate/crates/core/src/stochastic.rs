//! Seeded demand and lead-time sources.
//!
//! Two-parameter families are read as `(shape, scale)` for Gamma and Weibull
//! and `(mean, standard deviation)` for Normal.

use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Gamma, Normal, Weibull};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DistributionError {
    #[error("{kind}: parameter `{param}` must be {rule}, got {value}")]
    Parameter { kind: &'static str, param: &'static str, rule: &'static str, value: f64 },
    #[error("discrete distribution needs matching, non-empty values and weights with positive total weight")]
    Discrete,
    #[error("lead-time edges only accept exponential, gamma or deterministic specs")]
    LeadTimeKind,
    #[error("weekday schedule must have exactly 7 slots, got {0}")]
    Schedule(usize),
}

/// A non-negative random quantity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DistributionSpec {
    Normal { mu: f64, sigma: f64 },
    Gamma { shape: f64, scale: f64 },
    Weibull { shape: f64, scale: f64 },
    Exponential { rate: f64 },
    Deterministic { value: f64 },
    /// Finite support with relative weights; used for small exact oracles.
    Discrete { values: Vec<f64>, weights: Vec<f64> },
}

fn positive(kind: &'static str, param: &'static str, value: f64) -> Result<(), DistributionError> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(DistributionError::Parameter { kind, param, rule: "positive and finite", value })
    }
}

fn non_negative(kind: &'static str, param: &'static str, value: f64) -> Result<(), DistributionError> {
    if value >= 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(DistributionError::Parameter { kind, param, rule: "non-negative and finite", value })
    }
}

impl DistributionSpec {
    pub fn validate(&self) -> Result<(), DistributionError> {
        match self {
            DistributionSpec::Normal { mu, sigma } => {
                if !mu.is_finite() {
                    return Err(DistributionError::Parameter { kind: "normal", param: "mu", rule: "finite", value: *mu });
                }
                non_negative("normal", "sigma", *sigma)
            }
            DistributionSpec::Gamma { shape, scale } => {
                positive("gamma", "shape", *shape)?;
                positive("gamma", "scale", *scale)
            }
            DistributionSpec::Weibull { shape, scale } => {
                positive("weibull", "shape", *shape)?;
                positive("weibull", "scale", *scale)
            }
            DistributionSpec::Exponential { rate } => positive("exponential", "rate", *rate),
            DistributionSpec::Deterministic { value } => non_negative("deterministic", "value", *value),
            DistributionSpec::Discrete { values, weights } => {
                if values.is_empty()
                    || values.len() != weights.len()
                    || weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite())
                    || weights.iter().sum::<f64>() <= 0.0
                    || values.iter().any(|v| !v.is_finite())
                {
                    return Err(DistributionError::Discrete);
                }
                Ok(())
            }
        }
    }

    /// Analytic mean of the untruncated distribution.
    pub fn mean(&self) -> f64 {
        match self {
            DistributionSpec::Normal { mu, .. } => *mu,
            DistributionSpec::Gamma { shape, scale } => shape * scale,
            DistributionSpec::Weibull { shape, scale } => scale * libm::tgamma(1.0 + 1.0 / shape),
            DistributionSpec::Exponential { rate } => 1.0 / rate,
            DistributionSpec::Deterministic { value } => *value,
            DistributionSpec::Discrete { values, weights } => {
                let total: f64 = weights.iter().sum();
                values.iter().zip(weights).map(|(v, w)| v * w).sum::<f64>() / total
            }
        }
    }

    /// Analytic variance of the untruncated distribution.
    pub fn variance(&self) -> f64 {
        match self {
            DistributionSpec::Normal { sigma, .. } => sigma * sigma,
            DistributionSpec::Gamma { shape, scale } => shape * scale * scale,
            DistributionSpec::Weibull { shape, scale } => {
                let g1 = libm::tgamma(1.0 + 1.0 / shape);
                let g2 = libm::tgamma(1.0 + 2.0 / shape);
                scale * scale * (g2 - g1 * g1)
            }
            DistributionSpec::Exponential { rate } => 1.0 / (rate * rate),
            DistributionSpec::Deterministic { .. } => 0.0,
            DistributionSpec::Discrete { values, weights } => {
                let m = self.mean();
                let total: f64 = weights.iter().sum();
                values.iter().zip(weights).map(|(v, w)| w * (v - m) * (v - m)).sum::<f64>() / total
            }
        }
    }

    /// One raw draw (may be negative for Normal). Panics only on specs that
    /// fail [`validate`](Self::validate).
    pub fn sample_raw<R: RngCore + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            DistributionSpec::Normal { mu, sigma } => Normal::new(*mu, *sigma).expect("validated normal").sample(rng),
            DistributionSpec::Gamma { shape, scale } => Gamma::new(*shape, *scale).expect("validated gamma").sample(rng),
            DistributionSpec::Weibull { shape, scale } => {
                Weibull::new(*scale, *shape).expect("validated weibull").sample(rng)
            }
            DistributionSpec::Exponential { rate } => Exp::new(*rate).expect("validated exponential").sample(rng),
            DistributionSpec::Deterministic { value } => *value,
            DistributionSpec::Discrete { values, weights } => {
                let total: f64 = weights.iter().sum();
                let mut u = rng.random::<f64>() * total;
                for (v, w) in values.iter().zip(weights) {
                    if u < *w {
                        return *v;
                    }
                    u -= w;
                }
                *values.last().unwrap()
            }
        }
    }

    /// The same family with its spread multiplied by `factor` and its mean kept.
    ///
    /// Normal scales sigma; Gamma keeps `shape * scale` while dividing the shape by
    /// `factor^2`; Weibull solves for the shape whose coefficient of variation is
    /// `factor` times the current one. Exponential, deterministic and discrete
    /// specs are returned unchanged.
    pub fn with_spread_scaled(&self, factor: f64) -> DistributionSpec {
        match self {
            DistributionSpec::Normal { mu, sigma } => DistributionSpec::Normal { mu: *mu, sigma: sigma * factor },
            DistributionSpec::Gamma { shape, scale } => {
                let f2 = factor * factor;
                DistributionSpec::Gamma { shape: shape / f2, scale: scale * f2 }
            }
            DistributionSpec::Weibull { shape, scale } => {
                let mean = self.mean();
                let target_cv = weibull_cv(*shape) * factor;
                let new_shape = weibull_shape_for_cv(target_cv);
                let _ = scale;
                DistributionSpec::Weibull { shape: new_shape, scale: mean / libm::tgamma(1.0 + 1.0 / new_shape) }
            }
            other => other.clone(),
        }
    }
}

fn weibull_cv(shape: f64) -> f64 {
    let g1 = libm::tgamma(1.0 + 1.0 / shape);
    let g2 = libm::tgamma(1.0 + 2.0 / shape);
    libm::sqrt(g2 - g1 * g1) / g1
}

/// Weibull CV is strictly decreasing in the shape; bisect in log-space.
fn weibull_shape_for_cv(cv: f64) -> f64 {
    let (mut lo, mut hi) = (libm::log(0.1), libm::log(50.0));
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if weibull_cv(libm::exp(mid)) > cv {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    libm::exp(0.5 * (lo + hi))
}

/// A seeded random stream; `(seed, stream_id)` fixes the whole sequence.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        RngStream { seed, stream_id, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

/// Seven weekday slots, Monday first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WeekdaySchedule(pub Vec<DistributionSpec>);

impl WeekdaySchedule {
    pub fn constant(spec: DistributionSpec) -> Self {
        WeekdaySchedule(alloc::vec![spec; 7])
    }

    /// Mon-Wed, Thu-Fri, Sat-Sun blocks.
    pub fn blocks(early: DistributionSpec, mid: DistributionSpec, weekend: DistributionSpec) -> Self {
        WeekdaySchedule(alloc::vec![early.clone(), early.clone(), early, mid.clone(), mid, weekend.clone(), weekend])
    }

    pub fn validate(&self) -> Result<(), DistributionError> {
        if self.0.len() != 7 {
            return Err(DistributionError::Schedule(self.0.len()));
        }
        self.0.iter().try_for_each(DistributionSpec::validate)
    }

    pub fn slot(&self, day_of_week: usize) -> &DistributionSpec {
        &self.0[day_of_week % 7]
    }

    pub fn weekly_mean(&self) -> f64 {
        self.0.iter().map(DistributionSpec::mean).sum::<f64>() / 7.0
    }
}

/// Customer demand schedules indexed `[retailer][product]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemandModel {
    pub schedules: Vec<Vec<WeekdaySchedule>>,
}

impl DemandModel {
    pub fn validate(&self) -> Result<(), DistributionError> {
        self.schedules.iter().flatten().try_for_each(WeekdaySchedule::validate)
    }

    pub fn map_specs(&self, f: impl Fn(&DistributionSpec) -> DistributionSpec) -> DemandModel {
        DemandModel {
            schedules: self
                .schedules
                .iter()
                .map(|r| r.iter().map(|s| WeekdaySchedule(s.0.iter().map(&f).collect())).collect())
                .collect(),
        }
    }
}

/// Demand draw for one retailer, product and weekday, truncated below at zero.
pub fn sample_demand<R: RngCore + ?Sized>(
    model: &DemandModel,
    retailer: usize,
    product: usize,
    day_of_week: usize,
    rng: &mut R,
) -> f64 {
    let v = model.schedules[retailer][product].slot(day_of_week).sample_raw(rng);
    if v > 0.0 {
        v
    } else {
        0.0
    }
}

/// A replenishment edge of the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Edge {
    FarmToDc(usize),
    DcToRetailer(usize),
}

/// Lead-time distributions for every edge, with ceiling rounding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeadTimeModel {
    /// Indexed by DC.
    pub farm_to_dc: Vec<DistributionSpec>,
    /// Indexed by retailer.
    pub dc_to_retailer: Vec<DistributionSpec>,
    /// Smallest lead time returned after rounding (1 keeps lead times strictly positive).
    #[serde(default = "default_min_periods")]
    pub min_periods: u32,
}

fn default_min_periods() -> u32 {
    1
}

impl LeadTimeModel {
    pub fn validate(&self) -> Result<(), DistributionError> {
        for spec in self.farm_to_dc.iter().chain(&self.dc_to_retailer) {
            match spec {
                DistributionSpec::Exponential { .. }
                | DistributionSpec::Gamma { .. }
                | DistributionSpec::Deterministic { .. } => spec.validate()?,
                _ => return Err(DistributionError::LeadTimeKind),
            }
        }
        Ok(())
    }

    pub fn spec(&self, edge: Edge) -> Option<&DistributionSpec> {
        match edge {
            Edge::FarmToDc(k) => self.farm_to_dc.get(k),
            Edge::DcToRetailer(c) => self.dc_to_retailer.get(c),
        }
    }

    /// Configured mean lead time in days (before rounding).
    pub fn mean_days(&self, edge: Edge) -> Option<f64> {
        self.spec(edge).map(DistributionSpec::mean)
    }

    pub fn map_specs(&self, f: impl Fn(&DistributionSpec) -> DistributionSpec) -> LeadTimeModel {
        LeadTimeModel {
            farm_to_dc: self.farm_to_dc.iter().map(&f).collect(),
            dc_to_retailer: self.dc_to_retailer.iter().map(&f).collect(),
            min_periods: self.min_periods,
        }
    }
}

/// Draws a duration in days, rounds it up and applies the floor.
///
/// Returns `None` when the edge is not part of the model.
pub fn sample_lead_time<R: RngCore + ?Sized>(model: &LeadTimeModel, edge: Edge, rng: &mut R) -> Option<u32> {
    let raw = model.spec(edge)?.sample_raw(rng);
    Some(round_lead_time(raw, model.min_periods))
}

pub fn round_lead_time(raw_days: f64, min_periods: u32) -> u32 {
    let up = libm::ceil(raw_days.max(0.0));
    let periods = if up >= u32::MAX as f64 { u32::MAX } else { up as u32 };
    periods.max(min_periods)
}

/// Mean of the last `min(window, len)` realised demands; zero with no history.
pub fn forecast_demand(history: &[f64], window: usize) -> f64 {
    let window = window.max(1);
    let start = history.len().saturating_sub(window);
    let tail = &history[start..];
    if tail.is_empty() {
        0.0
    } else {
        tail.iter().sum::<f64>() / tail.len() as f64
    }
}

/// Exponentially smoothed lead time starting from `prior`.
pub fn forecast_lead_time(history: &[f64], smoothing: f64, prior: f64) -> f64 {
    history.iter().fold(prior, |est, &x| smoothing * x + (1.0 - smoothing) * est)
}

/// Incremental form of [`forecast_lead_time`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeadTimeForecaster {
    pub estimate: f64,
    pub smoothing: f64,
}

impl LeadTimeForecaster {
    pub fn new(prior: f64, smoothing: f64) -> Self {
        LeadTimeForecaster { estimate: prior, smoothing }
    }

    pub fn observe(&mut self, realized: f64) {
        self.estimate = self.smoothing * realized + (1.0 - self.smoothing) * self.estimate;
    }
}

/// Display name of a distribution family.
pub fn kind_name(spec: &DistributionSpec) -> String {
    String::from(match spec {
        DistributionSpec::Normal { .. } => "normal",
        DistributionSpec::Gamma { .. } => "gamma",
        DistributionSpec::Weibull { .. } => "weibull",
        DistributionSpec::Exponential { .. } => "exponential",
        DistributionSpec::Deterministic { .. } => "deterministic",
        DistributionSpec::Discrete { .. } => "discrete",
    })
}
