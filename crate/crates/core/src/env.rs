//! Farm → distribution center → retailer simulator with age-tracked stock,
//! FIFO order pipelines and the full per-period cost model.
//!
//! One call to [`SupplyChainEnv::step`] runs a period in a fixed order:
//! arrivals, order placement (DC orders from its farm, then retailer orders
//! shipped out of DC stock), customer demand, shortage, aging and wastage,
//! holding, transport and revenue.
//!
//! Demand and lead times are drawn from two independent streams before the
//! action is applied, so the random path of an episode does not depend on the
//! actions taken.

use alloc::collections::VecDeque;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::stochastic::{
    forecast_demand, round_lead_time, DemandModel, DistributionError, Edge, LeadTimeForecaster, LeadTimeModel,
    RngStream,
};

const CAPACITY_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EnvError {
    #[error("invalid scenario at `{path}`: {message}")]
    Scenario { path: String, message: String },
    #[error("distribution at `{path}`: {source}")]
    Distribution { path: String, source: DistributionError },
    #[error("action shape mismatch: {0}")]
    ActionShape(String),
    #[error("action contains a negative or non-finite quantity at {0}")]
    InvalidQuantity(String),
    #[error("episode is over; call reset")]
    EpisodeOver,
}

fn scenario_err(path: impl Into<String>, message: impl Into<String>) -> EnvError {
    EnvError::Scenario { path: path.into(), message: message.into() }
}

/// Perishability profile of a product plus its farm-side unit costs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProductSpec {
    pub name: String,
    /// Wastage penalty coefficient δ.
    pub delta: f64,
    /// Deterioration sensitivity μ.
    pub mu: f64,
    /// Periods until freshness reaches zero.
    pub shelf_life: u32,
    #[serde(default)]
    pub farm_unit_production_cost: f64,
    #[serde(default)]
    pub farm_unit_inventory_cost: f64,
}

/// Per-product parameters of one DC or retailer.
///
/// Retailers pay their DC's `unit_sale_price`; their own `unit_purchase_price`
/// is unused.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeProduct {
    pub initial_inventory: f64,
    #[serde(default)]
    pub unit_purchase_price: f64,
    pub unit_sale_price: f64,
    pub unit_holding_cost: f64,
    pub unit_shortage_cost: f64,
    pub unit_wastage_cost: f64,
    #[serde(default)]
    pub fixed_ordering_price: f64,
    pub capacity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FarmSpec {
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DcSpec {
    pub name: String,
    pub farm: usize,
    /// Distance from the supplying farm.
    pub distance_km: f64,
    pub products: Vec<NodeProduct>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetailerSpec {
    pub name: String,
    pub dc: usize,
    /// Distance from the supplying DC.
    pub distance_km: f64,
    pub products: Vec<NodeProduct>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FleetSpec {
    /// Vehicles available per edge and period (M).
    pub vehicles: u32,
    /// Units per vehicle (Q_m).
    pub vehicle_capacity: f64,
    pub loading_cost: f64,
    pub unloading_cost: f64,
    /// Fuel price per litre.
    pub fuel_cost: f64,
    /// Fixed charge per farm → DC dispatch.
    pub fixed_cost_to_dc: f64,
    /// Fixed charge per DC → retailer dispatch.
    pub fixed_cost_to_retailer: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintMode {
    /// Orders are projected onto capacity and fleet limits.
    Clip,
    /// Orders are taken as given; any violated constraint zeroes the reward.
    Strict,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransportMode {
    /// `Σ_p (q_p/Q_m)(loading + unloading)·dist·fuel·N + fixed` per dispatching edge.
    Literal,
    /// `N·(fuel·dist + loading + unloading) + fixed` per dispatching edge.
    PerVehicle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FixedCostMode {
    /// `fixed_order_cost` per positive DC product order; retailers pay none.
    DcOrders,
    /// Every node pays its own `fixed_ordering_price` per positive product order.
    NodeTable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvSettings {
    pub horizon: u32,
    pub mode: ConstraintMode,
    pub transport_mode: TransportMode,
    pub fixed_cost_mode: FixedCostMode,
    /// c_f.
    pub fixed_order_cost: f64,
    /// Fraction of every shipment lost in handling and transit.
    pub handling_loss: f64,
    pub demand_window: usize,
    pub lead_smoothing: f64,
}

impl Default for EnvSettings {
    fn default() -> Self {
        EnvSettings {
            horizon: 30,
            mode: ConstraintMode::Clip,
            transport_mode: TransportMode::Literal,
            fixed_cost_mode: FixedCostMode::DcOrders,
            fixed_order_cost: 12.0,
            handling_loss: 0.01,
            demand_window: 7,
            lead_smoothing: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub products: Vec<ProductSpec>,
    pub farms: Vec<FarmSpec>,
    pub dcs: Vec<DcSpec>,
    pub retailers: Vec<RetailerSpec>,
    pub fleet: FleetSpec,
    pub demand: DemandModel,
    pub lead_times: LeadTimeModel,
    pub settings: EnvSettings,
}

fn check_nonneg(path: String, v: f64) -> Result<(), EnvError> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(scenario_err(path, format!("must be a finite value >= 0, got {v}")))
    }
}

fn check_node_products(path: &str, items: &[NodeProduct], n: usize) -> Result<(), EnvError> {
    if items.len() != n {
        return Err(scenario_err(format!("{path}.products"), format!("expected {n} entries, got {}", items.len())));
    }
    for (p, np) in items.iter().enumerate() {
        let base = format!("{path}.products[{p}]");
        check_nonneg(format!("{base}.initial_inventory"), np.initial_inventory)?;
        check_nonneg(format!("{base}.unit_purchase_price"), np.unit_purchase_price)?;
        check_nonneg(format!("{base}.unit_sale_price"), np.unit_sale_price)?;
        check_nonneg(format!("{base}.unit_holding_cost"), np.unit_holding_cost)?;
        check_nonneg(format!("{base}.unit_shortage_cost"), np.unit_shortage_cost)?;
        check_nonneg(format!("{base}.unit_wastage_cost"), np.unit_wastage_cost)?;
        check_nonneg(format!("{base}.fixed_ordering_price"), np.fixed_ordering_price)?;
        if !(np.capacity > 0.0 && np.capacity.is_finite()) {
            return Err(scenario_err(format!("{base}.capacity"), "must be positive"));
        }
        if np.initial_inventory > np.capacity {
            return Err(scenario_err(
                format!("{base}.initial_inventory"),
                format!("{} exceeds capacity {}", np.initial_inventory, np.capacity),
            ));
        }
    }
    Ok(())
}

impl Scenario {
    pub fn product_count(&self) -> usize {
        self.products.len()
    }

    pub fn node_count(&self) -> usize {
        self.dcs.len() + self.retailers.len()
    }

    pub fn node_product(&self, node: NodeId, p: usize) -> &NodeProduct {
        match node {
            NodeId::Dc(k) => &self.dcs[k].products[p],
            NodeId::Retailer(c) => &self.retailers[c].products[p],
        }
    }

    pub fn capacity(&self, node: NodeId, p: usize) -> f64 {
        self.node_product(node, p).capacity
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        (0..self.dcs.len()).map(NodeId::Dc).chain((0..self.retailers.len()).map(NodeId::Retailer))
    }

    pub fn node_index(&self, node: NodeId) -> usize {
        match node {
            NodeId::Dc(k) => k,
            NodeId::Retailer(c) => self.dcs.len() + c,
        }
    }

    pub fn node_name(&self, node: NodeId) -> &str {
        match node {
            NodeId::Dc(k) => &self.dcs[k].name,
            NodeId::Retailer(c) => &self.retailers[c].name,
        }
    }

    /// Retailers supplied by DC `k`.
    pub fn retailers_of(&self, k: usize) -> Vec<usize> {
        (0..self.retailers.len()).filter(|&c| self.retailers[c].dc == k).collect()
    }

    /// Validates every invariant; returns soft warnings (sale below purchase price).
    pub fn validate(&self) -> Result<Vec<String>, EnvError> {
        let np = self.products.len();
        if np == 0 {
            return Err(scenario_err("products", "at least one product is required"));
        }
        if self.farms.is_empty() {
            return Err(scenario_err("farms", "at least one farm is required"));
        }
        if self.dcs.is_empty() {
            return Err(scenario_err("dcs", "at least one distribution center is required"));
        }
        if self.retailers.is_empty() {
            return Err(scenario_err("retailers", "at least one retailer is required"));
        }
        for (p, spec) in self.products.iter().enumerate() {
            let base = format!("products[{p}]");
            if !(spec.delta >= 0.0 && spec.delta <= 1.0) {
                return Err(scenario_err(format!("{base}.delta"), format!("must lie in [0, 1], got {}", spec.delta)));
            }
            if !(spec.mu > 0.0 && spec.mu.is_finite()) {
                return Err(scenario_err(format!("{base}.mu"), format!("must be positive, got {}", spec.mu)));
            }
            if spec.shelf_life < 1 {
                return Err(scenario_err(format!("{base}.shelf_life"), "must be at least 1"));
            }
            check_nonneg(format!("{base}.farm_unit_production_cost"), spec.farm_unit_production_cost)?;
            check_nonneg(format!("{base}.farm_unit_inventory_cost"), spec.farm_unit_inventory_cost)?;
        }
        let mut warnings = Vec::new();
        for (k, dc) in self.dcs.iter().enumerate() {
            let base = format!("dcs[{k}]");
            if dc.farm >= self.farms.len() {
                return Err(scenario_err(
                    format!("{base}.farm"),
                    format!("C3: references missing farm {}", dc.farm),
                ));
            }
            check_nonneg(format!("{base}.distance_km"), dc.distance_km)?;
            check_node_products(&base, &dc.products, np)?;
            for (p, item) in dc.products.iter().enumerate() {
                if item.unit_sale_price < item.unit_purchase_price {
                    warnings.push(format!("{base}.products[{p}]: sale price below purchase price"));
                }
            }
        }
        for (c, r) in self.retailers.iter().enumerate() {
            let base = format!("retailers[{c}]");
            if r.dc >= self.dcs.len() {
                return Err(scenario_err(format!("{base}.dc"), format!("C4: references missing distribution center {}", r.dc)));
            }
            check_nonneg(format!("{base}.distance_km"), r.distance_km)?;
            check_node_products(&base, &r.products, np)?;
            for (p, item) in r.products.iter().enumerate() {
                if item.unit_sale_price < self.dcs[r.dc].products[p].unit_sale_price {
                    warnings.push(format!("{base}.products[{p}]: sale price below the DC's sale price"));
                }
            }
        }
        let f = &self.fleet;
        if f.vehicles < 1 {
            return Err(scenario_err("fleet.vehicles", "must be at least 1"));
        }
        if !(f.vehicle_capacity > 0.0 && f.vehicle_capacity.is_finite()) {
            return Err(scenario_err("fleet.vehicle_capacity", "must be positive"));
        }
        check_nonneg("fleet.loading_cost".into(), f.loading_cost)?;
        check_nonneg("fleet.unloading_cost".into(), f.unloading_cost)?;
        check_nonneg("fleet.fuel_cost".into(), f.fuel_cost)?;
        check_nonneg("fleet.fixed_cost_to_dc".into(), f.fixed_cost_to_dc)?;
        check_nonneg("fleet.fixed_cost_to_retailer".into(), f.fixed_cost_to_retailer)?;

        if self.demand.schedules.len() != self.retailers.len() {
            return Err(scenario_err(
                "demand",
                format!("expected schedules for {} retailers, got {}", self.retailers.len(), self.demand.schedules.len()),
            ));
        }
        for (c, per_product) in self.demand.schedules.iter().enumerate() {
            if per_product.len() != np {
                return Err(scenario_err(format!("demand[{c}]"), format!("expected {np} products, got {}", per_product.len())));
            }
            for (p, sched) in per_product.iter().enumerate() {
                sched.validate().map_err(|e| EnvError::Distribution { path: format!("demand[{c}][{p}]"), source: e })?;
            }
        }
        if self.lead_times.farm_to_dc.len() != self.dcs.len() {
            return Err(scenario_err("lead_times.farm_to_dc", "expected one entry per distribution center"));
        }
        if self.lead_times.dc_to_retailer.len() != self.retailers.len() {
            return Err(scenario_err("lead_times.dc_to_retailer", "expected one entry per retailer"));
        }
        self.lead_times
            .validate()
            .map_err(|e| EnvError::Distribution { path: String::from("lead_times"), source: e })?;

        let s = &self.settings;
        if s.horizon < 1 {
            return Err(scenario_err("settings.horizon", "must be at least 1"));
        }
        check_nonneg("settings.fixed_order_cost".into(), s.fixed_order_cost)?;
        if !(0.0..1.0).contains(&s.handling_loss) {
            return Err(scenario_err("settings.handling_loss", "must lie in [0, 1)"));
        }
        if s.demand_window < 1 {
            return Err(scenario_err("settings.demand_window", "must be at least 1"));
        }
        if !(s.lead_smoothing > 0.0 && s.lead_smoothing <= 1.0) {
            return Err(scenario_err("settings.lead_smoothing", "must lie in (0, 1]"));
        }
        Ok(warnings)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NodeId {
    Dc(usize),
    Retailer(usize),
}

/// Any node including farms, used to describe order lines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NodeRef {
    Farm(usize),
    Dc(usize),
    Retailer(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bucket {
    pub quantity: f64,
    pub age: u32,
}

/// Age buckets of one product at one node, oldest first.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Stock {
    buckets: VecDeque<Bucket>,
}

impl Stock {
    pub fn with_quantity(q: f64) -> Self {
        let mut s = Stock::default();
        s.receive(q);
        s
    }

    pub fn total(&self) -> f64 {
        self.buckets.iter().map(|b| b.quantity).sum()
    }

    pub fn buckets(&self) -> impl Iterator<Item = &Bucket> {
        self.buckets.iter()
    }

    /// Adds fresh units (age 0).
    pub fn receive(&mut self, q: f64) {
        if q <= 0.0 {
            return;
        }
        match self.buckets.back_mut() {
            Some(b) if b.age == 0 => b.quantity += q,
            _ => self.buckets.push_back(Bucket { quantity: q, age: 0 }),
        }
    }

    /// Removes up to `q` units oldest-first and returns the amount removed.
    pub fn take(&mut self, q: f64) -> f64 {
        let mut left = q;
        let mut taken = 0.0;
        while left > 0.0 {
            let Some(front) = self.buckets.front_mut() else { break };
            let t = if front.quantity <= left { front.quantity } else { left };
            front.quantity -= t;
            left -= t;
            taken += t;
            if front.quantity <= 0.0 {
                self.buckets.pop_front();
            }
        }
        taken
    }

    /// Ages every bucket by one period. Returns `(purged, decayed)` units.
    pub fn age(&mut self, shelf_life: u32, delta: f64, mu: f64) -> (f64, f64) {
        let mut purged = 0.0;
        let mut decayed = 0.0;
        for b in self.buckets.iter_mut() {
            b.age += 1;
            if b.age >= shelf_life {
                purged += b.quantity;
                b.quantity = 0.0;
            } else {
                let loss = b.quantity * wastage_decay_fraction(delta, mu, freshness(b.age, shelf_life));
                b.quantity -= loss;
                decayed += loss;
            }
        }
        self.buckets.retain(|b| b.quantity > 0.0);
        (purged, decayed)
    }
}

/// Linear freshness `max(0, 1 − age/shelf_life)`.
pub fn freshness(age: u32, shelf_life: u32) -> f64 {
    let f = 1.0 - age as f64 / shelf_life as f64;
    if f > 0.0 {
        f
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OpenOrder {
    pub quantity: f64,
    pub remaining: u32,
    pub placed_at: u32,
}

/// FIFO in-transit orders of one product into one node.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OrderPipeline {
    orders: VecDeque<OpenOrder>,
}

impl OrderPipeline {
    pub fn total(&self) -> f64 {
        self.orders.iter().map(|o| o.quantity).sum()
    }

    pub fn orders(&self) -> impl Iterator<Item = &OpenOrder> {
        self.orders.iter()
    }

    pub fn is_empty(&self) -> bool {
        self.orders.is_empty()
    }

    fn push(&mut self, order: OpenOrder) {
        self.orders.push_back(order);
    }

    /// Counts every order down by one period and pops those that matured.
    fn advance(&mut self) -> Vec<OpenOrder> {
        for o in self.orders.iter_mut() {
            o.remaining = o.remaining.saturating_sub(1);
        }
        let mut out = Vec::new();
        while matches!(self.orders.front(), Some(o) if o.remaining == 0) {
            out.push(self.orders.pop_front().unwrap());
        }
        out
    }
}

/// `{v + a − d}⁺`.
pub fn holding_quantity(on_hand: f64, open_orders: f64, demand: f64) -> f64 {
    let q = on_hand + open_orders - demand;
    if q > 0.0 {
        q
    } else {
        0.0
    }
}

/// `{d − v − a}⁺`.
pub fn shortage_quantity(demand: f64, on_hand: f64, open_orders: f64) -> f64 {
    let q = demand - on_hand - open_orders;
    if q > 0.0 {
        q
    } else {
        0.0
    }
}

/// Fraction of a bucket lost to decay in one period: `δ·e^(−μF)`.
pub fn wastage_decay_fraction(delta: f64, mu: f64, freshness: f64) -> f64 {
    delta * libm::exp(-mu * freshness)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransportQuote {
    /// Vehicles the load would need at full utilisation.
    pub required_vehicles: u32,
    /// Vehicles dispatched (capped at the fleet size).
    pub vehicles: u32,
    pub cost: f64,
    /// Cost attributed to each product, including its share of the fixed charge.
    pub per_product: Vec<f64>,
}

/// Cost of one dispatch along an edge carrying `quantities` (one per product).
pub fn transport_cost(
    quantities: &[f64],
    distance_km: f64,
    fleet: &FleetSpec,
    fixed: f64,
    mode: TransportMode,
) -> TransportQuote {
    let total: f64 = quantities.iter().sum();
    if total <= 0.0 {
        return TransportQuote { required_vehicles: 0, vehicles: 0, cost: 0.0, per_product: vec![0.0; quantities.len()] };
    }
    let required = libm::ceil(total / fleet.vehicle_capacity);
    let required_vehicles = if required >= u32::MAX as f64 { u32::MAX } else { required as u32 };
    let vehicles = required_vehicles.min(fleet.vehicles).max(1);
    let n = vehicles as f64;
    let handling = fleet.loading_cost + fleet.unloading_cost;
    let mut per_product: Vec<f64> = match mode {
        TransportMode::Literal => quantities
            .iter()
            .map(|q| (q / fleet.vehicle_capacity) * handling * distance_km * fleet.fuel_cost * n)
            .collect(),
        TransportMode::PerVehicle => {
            let edge = n * (fleet.fuel_cost * distance_km + handling);
            quantities.iter().map(|q| edge * q / total).collect()
        }
    };
    for (c, q) in per_product.iter_mut().zip(quantities) {
        *c += fixed * q / total;
    }
    let cost = per_product.iter().sum();
    TransportQuote { required_vehicles, vehicles, cost, per_product }
}

/// Order quantities for every DC and retailer, indexed `[node][product]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub dc: Vec<Vec<f64>>,
    pub retailer: Vec<Vec<f64>>,
}

impl Action {
    pub fn zeros(dcs: usize, retailers: usize, products: usize) -> Self {
        Action { dc: vec![vec![0.0; products]; dcs], retailer: vec![vec![0.0; products]; retailers] }
    }

    pub fn for_scenario(s: &Scenario) -> Self {
        Action::zeros(s.dcs.len(), s.retailers.len(), s.products.len())
    }

    pub fn node(&self, node: NodeId) -> &[f64] {
        match node {
            NodeId::Dc(k) => &self.dc[k],
            NodeId::Retailer(c) => &self.retailer[c],
        }
    }

    pub fn node_mut(&mut self, node: NodeId) -> &mut Vec<f64> {
        match node {
            NodeId::Dc(k) => &mut self.dc[k],
            NodeId::Retailer(c) => &mut self.retailer[c],
        }
    }
}

/// One placed order, used by [`check_constraints`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrderLine {
    pub from: NodeRef,
    pub to: NodeRef,
    pub product: usize,
    pub quantity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConstraintReport {
    /// DC on-hand within capacity.
    pub c1: bool,
    /// Retailer on-hand within capacity.
    pub c2: bool,
    /// Each DC sources from at most one farm.
    pub c3: bool,
    /// Each retailer sources from at most one DC.
    pub c4: bool,
    /// Vehicles per dispatch within the fleet.
    pub c5: bool,
    /// Load per vehicle within vehicle capacity.
    pub c6: bool,
}

impl ConstraintReport {
    pub fn all_ok() -> Self {
        ConstraintReport { c1: true, c2: true, c3: true, c4: true, c5: true, c6: true }
    }

    pub fn satisfied(&self) -> bool {
        self.c1 && self.c2 && self.c3 && self.c4 && self.c5 && self.c6
    }

    fn merge(&mut self, other: &ConstraintReport) {
        self.c1 &= other.c1;
        self.c2 &= other.c2;
        self.c3 &= other.c3;
        self.c4 &= other.c4;
        self.c5 &= other.c5;
        self.c6 &= other.c6;
    }
}

fn fleet_ok(total: f64, fleet: &FleetSpec) -> (bool, bool) {
    if total <= 0.0 {
        return (true, true);
    }
    let required = libm::ceil(total / fleet.vehicle_capacity);
    let c5 = required <= fleet.vehicles as f64;
    let used = if c5 { required } else { fleet.vehicles as f64 };
    let c6 = total / used <= fleet.vehicle_capacity * (1.0 + CAPACITY_EPS);
    (c5, c6)
}

/// Evaluates C1–C6 for the current stock and a set of order lines.
pub fn check_constraints(env: &SupplyChainEnv, orders: &[OrderLine]) -> ConstraintReport {
    let s = &env.scenario;
    let mut report = ConstraintReport::all_ok();
    for node in s.nodes() {
        for p in 0..s.products.len() {
            let ok = env.on_hand(node, p) <= s.capacity(node, p) * (1.0 + CAPACITY_EPS) + CAPACITY_EPS;
            match node {
                NodeId::Dc(_) => report.c1 &= ok,
                NodeId::Retailer(_) => report.c2 &= ok,
            }
        }
    }
    let mut sources: Vec<(NodeRef, NodeRef)> = orders
        .iter()
        .filter(|o| o.quantity > 0.0)
        .map(|o| (o.to, o.from))
        .collect();
    sources.sort();
    sources.dedup();
    for w in sources.windows(2) {
        if w[0].0 == w[1].0 {
            match w[0].0 {
                NodeRef::Dc(_) => report.c3 = false,
                NodeRef::Retailer(_) => report.c4 = false,
                NodeRef::Farm(_) => {}
            }
        }
    }
    let mut edges: Vec<((NodeRef, NodeRef), f64)> = Vec::new();
    for o in orders.iter().filter(|o| o.quantity > 0.0) {
        match edges.iter_mut().find(|(e, _)| *e == (o.from, o.to)) {
            Some((_, q)) => *q += o.quantity,
            None => edges.push(((o.from, o.to), o.quantity)),
        }
    }
    for (_, total) in edges {
        let (c5, c6) = fleet_ok(total, &s.fleet);
        report.c5 &= c5;
        report.c6 &= c6;
    }
    report
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub purchase: f64,
    pub holding: f64,
    pub wastage: f64,
    pub shortage: f64,
    pub transport: f64,
}

impl CostBreakdown {
    pub fn total(&self) -> f64 {
        self.purchase + self.holding + self.wastage + self.shortage + self.transport
    }

    pub fn add(&mut self, o: &CostBreakdown) {
        self.purchase += o.purchase;
        self.holding += o.holding;
        self.wastage += o.wastage;
        self.shortage += o.shortage;
        self.transport += o.transport;
    }

    /// Holding, wastage, shortage and transport: every component except purchasing.
    pub fn inventory_total(&self) -> f64 {
        self.holding + self.wastage + self.shortage + self.transport
    }
}

/// Everything that happened to one product at one node in a period.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ProductFlow {
    pub start_on_hand: f64,
    pub arrived: f64,
    /// Request after capacity clipping.
    pub requested: f64,
    /// Quantity actually dispatched towards this node.
    pub ordered: f64,
    /// Units shipped out to downstream nodes (DCs only).
    pub outbound: f64,
    /// Units sold to end customers (retailers only).
    pub sold: f64,
    /// Customer demand (retailers) or downstream requests (DCs).
    pub demand: f64,
    pub unmet: f64,
    /// Shortage netted against every open order, for comparison.
    pub unmet_pipeline_netted: f64,
    pub purged: f64,
    pub decayed: f64,
    /// Inbound units lost in handling and transit.
    pub handling_loss: f64,
    pub end_on_hand: f64,
    pub pipeline: f64,
    pub costs: CostBreakdown,
    pub revenue: f64,
}

impl ProductFlow {
    pub fn wasted(&self) -> f64 {
        self.purged + self.decayed + self.handling_loss
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct NodeOutcome {
    pub revenue: f64,
    pub costs: CostBreakdown,
}

impl NodeOutcome {
    pub fn profit(&self) -> f64 {
        self.revenue - self.costs.total()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DcView {
    pub on_hand: Vec<f64>,
    pub pipeline: Vec<f64>,
    pub lead_forecast: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetailerView {
    pub on_hand: Vec<f64>,
    pub pipeline: Vec<f64>,
    pub lead_forecast: f64,
    pub demand_forecast: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub period: u32,
    pub horizon: u32,
    pub day_of_week: usize,
    pub dcs: Vec<DcView>,
    pub retailers: Vec<RetailerView>,
}

impl Observation {
    pub fn day_one_hot(&self) -> [f64; 7] {
        let mut z = [0.0; 7];
        z[self.day_of_week % 7] = 1.0;
        z
    }

    /// Raw flat vector: retailers, then DCs, then the weekday one-hot.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::new();
        for r in &self.retailers {
            v.extend_from_slice(&r.on_hand);
            v.extend_from_slice(&r.pipeline);
            v.push(r.lead_forecast);
            v.extend_from_slice(&r.demand_forecast);
        }
        for d in &self.dcs {
            v.extend_from_slice(&d.on_hand);
            v.extend_from_slice(&d.pipeline);
            v.push(d.lead_forecast);
        }
        v.extend_from_slice(&self.day_one_hot());
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepResult {
    pub observation: Observation,
    /// Network profit z_t (zero on a strict-mode violation).
    pub reward: f64,
    pub revenue: f64,
    pub costs: CostBreakdown,
    /// Per node in [`Scenario::nodes`] order.
    pub nodes: Vec<NodeOutcome>,
    /// `[node][product]` in [`Scenario::nodes`] order.
    pub flows: Vec<Vec<ProductFlow>>,
    pub constraints: ConstraintReport,
    pub customer_demand: f64,
    pub sold_units: f64,
    pub unmet_units: f64,
    pub wasted_units: f64,
    pub fill_rate: f64,
    /// Farm production and inventory cost of the units sold to DCs (not part of the reward).
    pub farm_cost: f64,
    pub period: u32,
    pub done: bool,
}

impl StepResult {
    /// Profit of one node; these sum to the reward whenever no strict-mode violation occurred.
    pub fn node_profit(&self, index: usize) -> f64 {
        self.nodes[index].profit()
    }
}

/// Sum of per-period rewards.
pub fn episode_return(rewards: &[f64]) -> f64 {
    rewards.iter().sum()
}

/// `Σ γ^t z_t`.
pub fn discounted_return(rewards: &[f64], gamma: f64) -> f64 {
    rewards.iter().rev().fold(0.0, |acc, r| r + gamma * acc)
}

/// Stream ids used for an environment's demand and lead-time draws.
pub const DEMAND_STREAM: u64 = 0;
pub const LEAD_STREAM: u64 = 1;

#[derive(Debug, Clone)]
pub struct SupplyChainEnv {
    scenario: Scenario,
    t: u32,
    /// `[node][product]` in node-index order.
    stock: Vec<Vec<Stock>>,
    pipes: Vec<Vec<OrderPipeline>>,
    /// Last scheduled arrival period per inbound edge, for the no-overtaking rule.
    last_arrival: Vec<u32>,
    lead_forecasts: Vec<LeadTimeForecaster>,
    demand_history: Vec<Vec<VecDeque<f64>>>,
    demand_rng: RngStream,
    lead_rng: RngStream,
    done: bool,
}

impl SupplyChainEnv {
    /// Builds and resets an environment.
    pub fn new(scenario: Scenario, seed: u64) -> Result<Self, EnvError> {
        scenario.validate()?;
        let n = scenario.node_count();
        let np = scenario.products.len();
        let mut env = SupplyChainEnv {
            t: 0,
            stock: vec![vec![Stock::default(); np]; n],
            pipes: vec![vec![OrderPipeline::default(); np]; n],
            last_arrival: vec![0; n],
            lead_forecasts: Vec::new(),
            demand_history: vec![vec![VecDeque::new(); np]; scenario.retailers.len()],
            demand_rng: RngStream::new(seed, DEMAND_STREAM),
            lead_rng: RngStream::new(seed, LEAD_STREAM),
            done: false,
            scenario,
        };
        env.reset(seed);
        Ok(env)
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn period(&self) -> u32 {
        self.t
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    /// Restores initial stock at age 0, empties pipelines and reseeds both streams.
    pub fn reset(&mut self, seed: u64) -> Observation {
        let np = self.scenario.products.len();
        let nodes: Vec<NodeId> = self.scenario.nodes().collect();
        for node in nodes {
            let i = self.scenario.node_index(node);
            for p in 0..np {
                self.stock[i][p] = Stock::with_quantity(self.scenario.node_product(node, p).initial_inventory);
                self.pipes[i][p] = OrderPipeline::default();
            }
            self.last_arrival[i] = 0;
        }
        let smoothing = self.scenario.settings.lead_smoothing;
        self.lead_forecasts = self
            .scenario
            .nodes()
            .map(|node| LeadTimeForecaster::new(self.scenario.lead_times.mean_days(edge_of(node)).unwrap_or(1.0), smoothing))
            .collect();
        for h in self.demand_history.iter_mut().flatten() {
            h.clear();
        }
        self.demand_rng = RngStream::new(seed, DEMAND_STREAM);
        self.lead_rng = RngStream::new(seed, LEAD_STREAM);
        self.t = 0;
        self.done = false;
        self.observe()
    }

    pub fn on_hand(&self, node: NodeId, p: usize) -> f64 {
        self.stock[self.scenario.node_index(node)][p].total()
    }

    pub fn stock(&self, node: NodeId, p: usize) -> &Stock {
        &self.stock[self.scenario.node_index(node)][p]
    }

    pub fn pipeline(&self, node: NodeId, p: usize) -> &OrderPipeline {
        &self.pipes[self.scenario.node_index(node)][p]
    }

    pub fn pipeline_total(&self, node: NodeId, p: usize) -> f64 {
        self.pipeline(node, p).total()
    }

    /// Replaces the stock of one product at one node with a single fresh bucket.
    /// Intended for tests and what-if studies.
    pub fn set_on_hand(&mut self, node: NodeId, p: usize, quantity: f64) {
        let i = self.scenario.node_index(node);
        self.stock[i][p] = Stock::with_quantity(quantity);
    }

    /// Largest request that keeps `on_hand + pipeline + q` within capacity.
    pub fn order_room(&self, node: NodeId, p: usize) -> f64 {
        let room = self.scenario.capacity(node, p) - self.on_hand(node, p) - self.pipeline_total(node, p);
        if room > 0.0 {
            room
        } else {
            0.0
        }
    }

    /// Order lines an action would place, before any clipping.
    pub fn order_lines(&self, action: &Action) -> Vec<OrderLine> {
        let mut lines = Vec::new();
        for (k, row) in action.dc.iter().enumerate() {
            for (p, &q) in row.iter().enumerate() {
                lines.push(OrderLine { from: NodeRef::Farm(self.scenario.dcs[k].farm), to: NodeRef::Dc(k), product: p, quantity: q });
            }
        }
        for (c, row) in action.retailer.iter().enumerate() {
            for (p, &q) in row.iter().enumerate() {
                lines.push(OrderLine {
                    from: NodeRef::Dc(self.scenario.retailers[c].dc),
                    to: NodeRef::Retailer(c),
                    product: p,
                    quantity: q,
                });
            }
        }
        lines
    }

    pub fn observe(&self) -> Observation {
        let s = &self.scenario;
        let np = s.products.len();
        let window = s.settings.demand_window;
        let dcs = (0..s.dcs.len())
            .map(|k| {
                let node = NodeId::Dc(k);
                DcView {
                    on_hand: (0..np).map(|p| self.on_hand(node, p)).collect(),
                    pipeline: (0..np).map(|p| self.pipeline_total(node, p)).collect(),
                    lead_forecast: self.lead_forecasts[s.node_index(node)].estimate,
                }
            })
            .collect();
        let retailers = (0..s.retailers.len())
            .map(|c| {
                let node = NodeId::Retailer(c);
                RetailerView {
                    on_hand: (0..np).map(|p| self.on_hand(node, p)).collect(),
                    pipeline: (0..np).map(|p| self.pipeline_total(node, p)).collect(),
                    lead_forecast: self.lead_forecasts[s.node_index(node)].estimate,
                    demand_forecast: (0..np)
                        .map(|p| {
                            let h = &self.demand_history[c][p];
                            let (a, b) = h.as_slices();
                            if b.is_empty() {
                                forecast_demand(a, window)
                            } else {
                                let v: Vec<f64> = h.iter().copied().collect();
                                forecast_demand(&v, window)
                            }
                        })
                        .collect(),
                }
            })
            .collect();
        Observation { period: self.t, horizon: s.settings.horizon, day_of_week: (self.t % 7) as usize, dcs, retailers }
    }

    fn check_action(&self, action: &Action) -> Result<(), EnvError> {
        let s = &self.scenario;
        let np = s.products.len();
        if action.dc.len() != s.dcs.len() || action.retailer.len() != s.retailers.len() {
            return Err(EnvError::ActionShape(format!(
                "expected {} DC rows and {} retailer rows",
                s.dcs.len(),
                s.retailers.len()
            )));
        }
        for (k, row) in action.dc.iter().enumerate() {
            if row.len() != np {
                return Err(EnvError::ActionShape(format!("dc[{k}] has {} products, expected {np}", row.len())));
            }
            if let Some(p) = row.iter().position(|q| !(q.is_finite() && *q >= 0.0)) {
                return Err(EnvError::InvalidQuantity(format!("dc[{k}][{p}]")));
            }
        }
        for (c, row) in action.retailer.iter().enumerate() {
            if row.len() != np {
                return Err(EnvError::ActionShape(format!("retailer[{c}] has {} products, expected {np}", row.len())));
            }
            if let Some(p) = row.iter().position(|q| !(q.is_finite() && *q >= 0.0)) {
                return Err(EnvError::InvalidQuantity(format!("retailer[{c}][{p}]")));
            }
        }
        Ok(())
    }

    /// Requests for one node after capacity and fleet clipping (clip mode only).
    fn clip_requests(&self, node: NodeId, requested: &[f64]) -> Vec<f64> {
        let mut q: Vec<f64> = requested.to_vec();
        if self.scenario.settings.mode == ConstraintMode::Clip {
            for (p, v) in q.iter_mut().enumerate() {
                let room = self.order_room(node, p);
                if *v > room {
                    *v = room;
                }
            }
            let fleet = &self.scenario.fleet;
            let max_load = fleet.vehicles as f64 * fleet.vehicle_capacity;
            let total: f64 = q.iter().sum();
            if total > max_load {
                let f = max_load / total;
                for v in q.iter_mut() {
                    *v *= f;
                }
            }
        }
        q
    }

    /// Schedules an inbound order and returns the quantity delivered immediately
    /// (zero-lead orders).
    fn enqueue(&mut self, node: NodeId, p: usize, quantity: f64, lead: u32) -> f64 {
        let i = self.scenario.node_index(node);
        if quantity <= 0.0 {
            return 0.0;
        }
        // No overtaking: an order never arrives before one placed earlier on the same edge.
        let arrival = (self.t + lead).max(self.last_arrival[i]);
        self.last_arrival[i] = arrival;
        if arrival == self.t {
            self.stock[i][p].receive(quantity);
            return quantity;
        }
        self.pipes[i][p].push(OpenOrder { quantity, remaining: arrival - self.t, placed_at: self.t });
        0.0
    }

    /// Runs one period.
    pub fn step(&mut self, action: &Action) -> Result<StepResult, EnvError> {
        if self.done {
            return Err(EnvError::EpisodeOver);
        }
        self.check_action(action)?;
        let nd = self.scenario.dcs.len();
        let nr = self.scenario.retailers.len();
        let np = self.scenario.products.len();
        let n = nd + nr;
        let t = self.t;
        let dow = (t % 7) as usize;

        // Draw this period's randomness up front (common random numbers).
        let mut demand = vec![vec![0.0; np]; nr];
        for (c, row) in demand.iter_mut().enumerate() {
            for (p, d) in row.iter_mut().enumerate() {
                *d = crate::stochastic::sample_demand(&self.scenario.demand, c, p, dow, &mut self.demand_rng);
            }
        }
        let min_lead = self.scenario.lead_times.min_periods;
        let mut leads = vec![0u32; n];
        for k in 0..nd {
            let raw = self.scenario.lead_times.farm_to_dc[k].sample_raw(&mut self.lead_rng);
            leads[k] = round_lead_time(raw, min_lead);
        }
        for c in 0..nr {
            let raw = self.scenario.lead_times.dc_to_retailer[c].sample_raw(&mut self.lead_rng);
            leads[nd + c] = round_lead_time(raw, min_lead);
        }

        let mut flows = vec![vec![ProductFlow::default(); np]; n];
        let mut nodes = vec![NodeOutcome::default(); n];
        let mut report = ConstraintReport::all_ok();

        for i in 0..n {
            for p in 0..np {
                flows[i][p].start_on_hand = self.stock[i][p].total();
            }
        }

        // (1) arrivals
        for i in 0..n {
            // Every product on an edge shares the same lead draw; learn from it once.
            let mut realized: Option<u32> = None;
            for p in 0..np {
                for o in self.pipes[i][p].advance() {
                    self.stock[i][p].receive(o.quantity);
                    flows[i][p].arrived += o.quantity;
                    realized.get_or_insert(t - o.placed_at);
                }
            }
            if let Some(l) = realized {
                self.lead_forecasts[i].observe(l as f64);
            }
        }
        let on_hand_after_arrivals: Vec<Vec<f64>> =
            (0..n).map(|i| (0..np).map(|p| self.stock[i][p].total()).collect()).collect();

        let settings = self.scenario.settings.clone();
        let fleet = self.scenario.fleet.clone();
        let h = settings.handling_loss;

        // (2a) DC orders from farms
        let mut farm_cost = 0.0;
        for k in 0..nd {
            let node = NodeId::Dc(k);
            let q = self.clip_requests(node, &action.dc[k]);
            let dc = self.scenario.dcs[k].clone();
            let quote = transport_cost(&q, dc.distance_km, &fleet, fleet.fixed_cost_to_dc, settings.transport_mode);
            let (c5, c6) = fleet_ok(q.iter().sum(), &fleet);
            report.c5 &= c5;
            report.c6 &= c6;
            for p in 0..np {
                let f = &mut flows[k][p];
                f.requested = q[p];
                f.ordered = q[p];
                f.costs.transport += quote.per_product[p];
                if q[p] > 0.0 {
                    let item = &dc.products[p];
                    f.costs.purchase += item.unit_purchase_price * q[p];
                    f.costs.purchase += match settings.fixed_cost_mode {
                        FixedCostMode::DcOrders => settings.fixed_order_cost,
                        FixedCostMode::NodeTable => item.fixed_ordering_price,
                    };
                    let spec = &self.scenario.products[p];
                    farm_cost += (spec.farm_unit_production_cost + spec.farm_unit_inventory_cost) * q[p];
                    let lost = q[p] * h;
                    f.handling_loss += lost;
                    f.costs.wastage += item.unit_wastage_cost * lost;
                    let now = self.enqueue(node, p, q[p] - lost, leads[k]);
                    flows[k][p].arrived += now;
                }
            }
        }

        // (2b) retailer orders, shipped out of DC stock
        let mut retailer_requests = vec![vec![0.0; np]; nr];
        for c in 0..nr {
            retailer_requests[c] = self.clip_requests(NodeId::Retailer(c), &action.retailer[c]);
        }
        let mut shipped = vec![vec![0.0; np]; nr];
        for k in 0..nd {
            let served = self.scenario.retailers_of(k);
            for p in 0..np {
                let want: f64 = served.iter().map(|&c| retailer_requests[c][p]).sum();
                let available = self.stock[k][p].total();
                let share = if want > available && want > 0.0 { available / want } else { 1.0 };
                let mut out = 0.0;
                for &c in &served {
                    let s = retailer_requests[c][p] * share;
                    let taken = self.stock[k][p].take(s);
                    shipped[c][p] = taken;
                    out += taken;
                }
                let f = &mut flows[k][p];
                f.outbound = out;
                f.demand = want;
                f.unmet = shortage_quantity(want, f.start_on_hand, f.arrived);
                f.unmet_pipeline_netted = shortage_quantity(want, f.start_on_hand, self.pipes[k][p].total() + f.arrived);
                let item = &self.scenario.dcs[k].products[p];
                f.costs.shortage += item.unit_shortage_cost * f.unmet;
                f.revenue += item.unit_sale_price * out;
            }
        }
        for c in 0..nr {
            let i = nd + c;
            let node = NodeId::Retailer(c);
            let r = self.scenario.retailers[c].clone();
            let quote = transport_cost(&shipped[c], r.distance_km, &fleet, fleet.fixed_cost_to_retailer, settings.transport_mode);
            let (c5, c6) = fleet_ok(shipped[c].iter().sum(), &fleet);
            report.c5 &= c5;
            report.c6 &= c6;
            for p in 0..np {
                let q = shipped[c][p];
                let f = &mut flows[i][p];
                f.requested = retailer_requests[c][p];
                f.ordered = q;
                f.costs.transport += quote.per_product[p];
                if q > 0.0 {
                    let item = &r.products[p];
                    f.costs.purchase += self.scenario.dcs[r.dc].products[p].unit_sale_price * q;
                    if settings.fixed_cost_mode == FixedCostMode::NodeTable {
                        f.costs.purchase += item.fixed_ordering_price;
                    }
                    let lost = q * h;
                    f.handling_loss += lost;
                    f.costs.wastage += item.unit_wastage_cost * lost;
                    let now = self.enqueue(node, p, q - lost, leads[i]);
                    flows[i][p].arrived += now;
                }
            }
        }

        // C1/C2 on post-arrival stock
        for i in 0..n {
            let node = if i < nd { NodeId::Dc(i) } else { NodeId::Retailer(i - nd) };
            for p in 0..np {
                let cap = self.scenario.capacity(node, p);
                let peak = on_hand_after_arrivals[i][p].max(self.stock[i][p].total() + flows[i][p].outbound);
                let ok = peak <= cap * (1.0 + CAPACITY_EPS) + CAPACITY_EPS;
                if i < nd {
                    report.c1 &= ok;
                } else {
                    report.c2 &= ok;
                }
            }
        }

        // (3) customer demand, oldest stock first, and (4) shortage
        let mut customer_demand = 0.0;
        let mut sold_units = 0.0;
        let mut unmet_units = 0.0;
        for c in 0..nr {
            let i = nd + c;
            for p in 0..np {
                let d = demand[c][p];
                let sold = self.stock[i][p].take(d);
                let f = &mut flows[i][p];
                f.demand = d;
                f.sold = sold;
                f.unmet = shortage_quantity(d, f.start_on_hand, f.arrived);
                f.unmet_pipeline_netted = shortage_quantity(d, f.start_on_hand, f.arrived + self.pipes[i][p].total());
                let item = &self.scenario.retailers[c].products[p];
                f.costs.shortage += item.unit_shortage_cost * f.unmet;
                f.revenue += item.unit_sale_price * sold;
                customer_demand += d;
                sold_units += sold;
                unmet_units += d - sold;
                let hist = &mut self.demand_history[c][p];
                hist.push_back(d);
                while hist.len() > settings.demand_window {
                    hist.pop_front();
                }
            }
        }

        // (6) holding on post-sales stock, before aging
        for i in 0..n {
            let node = if i < nd { NodeId::Dc(i) } else { NodeId::Retailer(i - nd) };
            for p in 0..np {
                let f = &mut flows[i][p];
                let out = f.outbound + f.sold;
                let held = holding_quantity(f.start_on_hand, f.arrived, out);
                f.costs.holding += self.scenario.node_product(node, p).unit_holding_cost * held;
            }
        }

        // (5) aging and wastage
        let mut wasted_units = 0.0;
        for i in 0..n {
            let node = if i < nd { NodeId::Dc(i) } else { NodeId::Retailer(i - nd) };
            for p in 0..np {
                let spec = &self.scenario.products[p];
                let (purged, decayed) = self.stock[i][p].age(spec.shelf_life, spec.delta, spec.mu);
                let f = &mut flows[i][p];
                f.purged = purged;
                f.decayed = decayed;
                f.costs.wastage += self.scenario.node_product(node, p).unit_wastage_cost * (purged + decayed);
                f.end_on_hand = self.stock[i][p].total();
                f.pipeline = self.pipes[i][p].total();
                wasted_units += f.wasted();
            }
        }

        let mut costs = CostBreakdown::default();
        let mut revenue = 0.0;
        for i in 0..n {
            for f in &flows[i] {
                nodes[i].costs.add(&f.costs);
                nodes[i].revenue += f.revenue;
            }
            costs.add(&nodes[i].costs);
            revenue += nodes[i].revenue;
        }
        let profit = revenue - costs.total();
        let reward = if settings.mode == ConstraintMode::Strict && !report.satisfied() { 0.0 } else { profit };

        self.t += 1;
        self.done = self.t >= settings.horizon;
        let fill_rate = if customer_demand > 0.0 { sold_units / customer_demand } else { 1.0 };
        Ok(StepResult {
            observation: self.observe(),
            reward,
            revenue,
            costs,
            nodes,
            flows,
            constraints: report,
            customer_demand,
            sold_units,
            unmet_units,
            wasted_units,
            fill_rate,
            farm_cost,
            period: t,
            done: self.done,
        })
    }

    /// Checks C1–C6 for an action against the current state without stepping.
    pub fn feasibility(&self, action: &Action) -> ConstraintReport {
        let mut r = check_constraints(self, &self.order_lines(action));
        let mut cap = ConstraintReport::all_ok();
        for (k, row) in action.dc.iter().enumerate() {
            for (p, q) in row.iter().enumerate() {
                cap.c1 &= *q <= self.order_room(NodeId::Dc(k), p) + CAPACITY_EPS;
            }
        }
        for (c, row) in action.retailer.iter().enumerate() {
            for (p, q) in row.iter().enumerate() {
                cap.c2 &= *q <= self.order_room(NodeId::Retailer(c), p) + CAPACITY_EPS;
            }
        }
        r.merge(&cap);
        r
    }
}

fn edge_of(node: NodeId) -> Edge {
    match node {
        NodeId::Dc(k) => Edge::FarmToDc(k),
        NodeId::Retailer(c) => Edge::DcToRetailer(c),
    }
}

/// One row of an episode trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: u32,
    pub node: String,
    pub product: String,
    pub on_hand: f64,
    pub pipeline: f64,
    pub ordered: f64,
    pub arrived: f64,
    pub sold: f64,
    pub unmet: f64,
    pub wasted: f64,
    pub holding_cost: f64,
    pub shortage_cost: f64,
    pub wastage_cost: f64,
    pub transport_cost: f64,
    pub reward: f64,
}

/// Column order of [`TraceRow`].
pub const TRACE_COLUMNS: [&str; 15] = [
    "t",
    "node",
    "product",
    "on_hand",
    "pipeline",
    "ordered",
    "arrived",
    "sold",
    "unmet",
    "wasted",
    "holding_cost",
    "shortage_cost",
    "wastage_cost",
    "transport_cost",
    "reward",
];

/// Trace rows of one step; `sold` is outbound shipments for DCs and `reward` is z_t.
pub fn trace_rows(scenario: &Scenario, result: &StepResult) -> Vec<TraceRow> {
    let mut rows = Vec::new();
    for node in scenario.nodes() {
        let i = scenario.node_index(node);
        for (p, f) in result.flows[i].iter().enumerate() {
            rows.push(TraceRow {
                t: result.period,
                node: String::from(scenario.node_name(node)),
                product: scenario.products[p].name.clone(),
                on_hand: f.end_on_hand,
                pipeline: f.pipeline,
                ordered: f.ordered,
                arrived: f.arrived,
                sold: f.sold + f.outbound,
                unmet: f.unmet,
                wasted: f.wasted(),
                holding_cost: f.costs.holding,
                shortage_cost: f.costs.shortage,
                wastage_cost: f.costs.wastage,
                transport_cost: f.costs.transport,
                reward: result.reward,
            });
        }
    }
    rows
}
