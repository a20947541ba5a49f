//! Built-in scenarios and the parameter substitutions used by sweeps.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::env::{DcSpec, EnvSettings, FarmSpec, FleetSpec, NodeProduct, ProductSpec, RetailerSpec, Scenario};
use crate::stochastic::{DemandModel, DistributionSpec, LeadTimeModel, WeekdaySchedule};

/// Assumed DC → retailer distance; only the farm → DC distance is given.
pub const DEFAULT_RETAILER_DISTANCE_KM: f64 = 10.0;
/// Default lead-time rate on every edge (mean one day before rounding).
pub const DEFAULT_LEAD_RATE: f64 = 1.0;

pub fn normal_schedule() -> WeekdaySchedule {
    WeekdaySchedule::blocks(
        DistributionSpec::Normal { mu: 3.0, sigma: 1.5 },
        DistributionSpec::Normal { mu: 6.0, sigma: 1.0 },
        DistributionSpec::Normal { mu: 12.0, sigma: 2.0 },
    )
}

pub fn gamma_schedule() -> WeekdaySchedule {
    WeekdaySchedule::blocks(
        DistributionSpec::Gamma { shape: 2.0, scale: 10.0 },
        DistributionSpec::Gamma { shape: 4.0, scale: 5.0 },
        DistributionSpec::Gamma { shape: 1.0, scale: 20.0 },
    )
}

pub fn weibull_schedule() -> WeekdaySchedule {
    WeekdaySchedule::blocks(
        DistributionSpec::Weibull { shape: 1.0, scale: 0.5 },
        DistributionSpec::Weibull { shape: 3.0, scale: 3.0 },
        DistributionSpec::Weibull { shape: 3.0, scale: 0.2 },
    )
}

fn products() -> Vec<ProductSpec> {
    vec![
        ProductSpec {
            name: String::from("pomegranate"),
            delta: 0.05,
            mu: 2.0,
            shelf_life: 10,
            farm_unit_production_cost: 3.0,
            farm_unit_inventory_cost: 0.04,
        },
        ProductSpec {
            name: String::from("bayberry"),
            delta: 0.18,
            mu: 6.0,
            shelf_life: 6,
            farm_unit_production_cost: 8.2,
            farm_unit_inventory_cost: 0.12,
        },
        ProductSpec {
            name: String::from("apple"),
            delta: 0.05,
            mu: 2.0,
            shelf_life: 12,
            farm_unit_production_cost: 9.5,
            farm_unit_inventory_cost: 0.14,
        },
    ]
}

#[allow(clippy::too_many_arguments)]
fn item(init: f64, buy: f64, sell: f64, hold: f64, short: f64, waste: f64, fixed: f64, cap: f64) -> NodeProduct {
    NodeProduct {
        initial_inventory: init,
        unit_purchase_price: buy,
        unit_sale_price: sell,
        unit_holding_cost: hold,
        unit_shortage_cost: short,
        unit_wastage_cost: waste,
        fixed_ordering_price: fixed,
        capacity: cap,
    }
}

fn dc_products() -> Vec<NodeProduct> {
    vec![
        item(80.0, 4.25, 8.28, 0.17, 0.24, 0.02, 300.0, 500.0),
        item(80.0, 10.05, 17.0, 0.2, 0.34, 0.14, 300.0, 500.0),
        item(80.0, 11.25, 19.2, 0.36, 0.44, 0.17, 300.0, 500.0),
    ]
}

/// The three reference retailer tables with their demand families per product.
fn retailer_tables() -> [(Vec<NodeProduct>, [WeekdaySchedule; 3]); 3] {
    [
        (
            vec![
                item(60.0, 0.0, 25.8, 0.2, 0.32, 0.04, 200.0, 200.0),
                item(20.0, 0.0, 35.0, 0.28, 0.38, 0.16, 200.0, 200.0),
                item(30.0, 0.0, 50.0, 0.5, 0.46, 0.19, 200.0, 200.0),
            ],
            [normal_schedule(), weibull_schedule(), gamma_schedule()],
        ),
        (
            vec![
                item(70.0, 0.0, 26.0, 0.21, 0.12, 0.10, 200.0, 100.0),
                item(30.0, 0.0, 35.0, 0.27, 0.18, 0.18, 200.0, 100.0),
                item(50.0, 0.0, 52.0, 0.43, 0.38, 0.2, 200.0, 100.0),
            ],
            [weibull_schedule(), normal_schedule(), gamma_schedule()],
        ),
        (
            vec![
                item(60.0, 0.0, 27.0, 0.19, 0.14, 0.09, 200.0, 100.0),
                item(35.0, 0.0, 34.0, 0.2, 0.19, 0.24, 200.0, 100.0),
                item(42.0, 0.0, 50.0, 0.41, 0.39, 0.28, 200.0, 100.0),
            ],
            [gamma_schedule(), weibull_schedule(), normal_schedule()],
        ),
    ]
}

pub fn paper_fleet() -> FleetSpec {
    FleetSpec {
        vehicles: 10,
        vehicle_capacity: 4000.0,
        loading_cost: 26.0,
        unloading_cost: 26.0,
        fuel_cost: 40.0,
        fixed_cost_to_dc: 18.0,
        fixed_cost_to_retailer: 18.0,
    }
}

fn exp_lead(rate: f64) -> DistributionSpec {
    DistributionSpec::Exponential { rate }
}

/// Builds a network of `farms` farms, `dcs` DCs and `retailers` retailers from the
/// reference tables. DC `k` buys from farm `k % farms`, retailer `c` from DC `c % dcs`,
/// and retailer `c` copies table `c % 3`.
pub fn paper_network(farms: usize, dcs: usize, retailers: usize) -> Scenario {
    let tables = retailer_tables();
    let mut retailer_specs = Vec::with_capacity(retailers);
    let mut schedules = Vec::with_capacity(retailers);
    for c in 0..retailers {
        let (items, sched) = &tables[c % 3];
        retailer_specs.push(RetailerSpec {
            name: format!("retailer{}", c + 1),
            dc: c % dcs,
            distance_km: DEFAULT_RETAILER_DISTANCE_KM,
            products: items.clone(),
        });
        schedules.push(sched.to_vec());
    }
    Scenario {
        products: products(),
        farms: (0..farms).map(|j| FarmSpec { name: format!("farm{}", j + 1) }).collect(),
        dcs: (0..dcs)
            .map(|k| DcSpec { name: format!("dc{}", k + 1), farm: k % farms, distance_km: 50.0, products: dc_products() })
            .collect(),
        retailers: retailer_specs,
        fleet: paper_fleet(),
        demand: DemandModel { schedules },
        lead_times: LeadTimeModel {
            farm_to_dc: vec![exp_lead(DEFAULT_LEAD_RATE); dcs],
            dc_to_retailer: vec![exp_lead(DEFAULT_LEAD_RATE); retailers],
            min_periods: 1,
        },
        settings: EnvSettings::default(),
    }
}

/// One farm, one DC and the three reference retailers.
pub fn paper_default() -> Scenario {
    paper_network(1, 1, 3)
}

/// Three farms, four DCs, ten retailers. Farms differ in lead-time rate.
pub fn paper_large() -> Scenario {
    let mut s = paper_network(3, 4, 10);
    let farm_rates = [1.0, 0.5, 2.0];
    for k in 0..s.dcs.len() {
        s.lead_times.farm_to_dc[k] = exp_lead(farm_rates[s.dcs[k].farm % 3]);
    }
    s
}

/// Sets every edge to an exponential lead time with the given rate.
pub fn with_lead_rate(s: &Scenario, rate: f64) -> Scenario {
    let mut out = s.clone();
    out.lead_times = s.lead_times.map_specs(|_| exp_lead(rate));
    out
}

/// Sets δ of every product.
pub fn with_delta(s: &Scenario, delta: f64) -> Scenario {
    let mut out = s.clone();
    for p in &mut out.products {
        p.delta = delta;
    }
    out
}

/// Multiplies every demand distribution's spread by `1 + fraction`, keeping means.
pub fn with_demand_variance(s: &Scenario, fraction: f64) -> Scenario {
    let mut out = s.clone();
    out.demand = s.demand.map_specs(|d| d.with_spread_scaled(1.0 + fraction));
    out
}

/// Replicates the retailer set `factor` times (copies keep their DC and schedules).
pub fn with_retailers_replicated(s: &Scenario, factor: usize) -> Scenario {
    let mut out = s.clone();
    let base = s.retailers.len();
    for copy in 1..factor.max(1) {
        for c in 0..base {
            let mut r = s.retailers[c].clone();
            r.name = format!("{}_{}", r.name, copy + 1);
            out.retailers.push(r);
            out.demand.schedules.push(s.demand.schedules[c].clone());
            out.lead_times.dc_to_retailer.push(s.lead_times.dc_to_retailer[c].clone());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn built_in_scenarios_validate() {
        assert!(paper_default().validate().is_ok());
        assert!(paper_large().validate().is_ok());
        let s = with_retailers_replicated(&paper_default(), 3);
        assert_eq!(s.retailers.len(), 9);
        assert!(s.validate().is_ok());
    }

    #[test]
    fn reference_values() {
        let s = paper_default();
        let r1: Vec<f64> = s.retailers[0].products.iter().map(|p| p.initial_inventory).collect();
        assert_eq!(r1, vec![60.0, 20.0, 30.0]);
        assert!(s.dcs[0].products.iter().all(|p| p.initial_inventory == 80.0 && p.capacity == 500.0));
        assert_eq!(s.demand.schedules[0][0].slot(5), &DistributionSpec::Normal { mu: 12.0, sigma: 2.0 });
    }

    #[test]
    fn substitutions() {
        let s = paper_default();
        assert!(with_delta(&s, 0.2).products.iter().all(|p| p.delta == 0.2));
        let l = with_lead_rate(&s, 0.1);
        assert_eq!(l.lead_times.farm_to_dc[0], DistributionSpec::Exponential { rate: 0.1 });
        let v = with_demand_variance(&s, 0.8);
        assert_eq!(v.demand.schedules[0][0].slot(0), &DistributionSpec::Normal { mu: 3.0, sigma: 1.5 * 1.8 });
    }
}
