//! Storage-aware real-time dispatch over a committed day.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{CommitmentSchedule, Fleet, ScenarioData, ThermalDispatch, ThermalStack};
use crate::benchmark::{optimize_on_grid, Schedule};
use crate::bidding::BidCurve;
use crate::clearing::{clear_priceinfluencer, MarketClearing};
use crate::error::{Error, Result};
use crate::storage::{apply_dispatch, soc_total, StorageSpec, StorageState};
use crate::valuation::SocGrid;

/// Look-ahead optimum of the day with storage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiDispatch {
    pub storage: Schedule,
    pub thermal: Vec<ThermalDispatch>,
    /// Real-time price per hour ($/MWh).
    pub prices: Vec<f64>,
    /// Thermal production, no-load, startup and storage discharge cost ($).
    pub system_cost: f64,
    /// `sum_t lambda_t (d_t - p_t) - sum C_s d_s` at the real-time prices ($).
    pub storage_profit: f64,
}

/// Sequential single-hour clearing of the day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealtimeDay {
    pub clearings: Vec<MarketClearing>,
    /// `T + 1` storage states.
    pub states: Vec<StorageState>,
    pub prices: Vec<f64>,
    pub system_cost: f64,
    pub storage_profit: f64,
}

fn stacks(fleet: &Fleet, commitment: &CommitmentSchedule, scenario: &ScenarioData) -> Result<Vec<ThermalStack>> {
    if commitment.hours() != scenario.hours() || commitment.status.len() != fleet.len() {
        return Err(Error::InvalidInput("commitment does not match fleet and scenario".into()));
    }
    Ok((0..scenario.hours()).map(|t| commitment.stack(fleet, t)).collect())
}

fn startup_cost(fleet: &Fleet, commitment: &CommitmentSchedule) -> f64 {
    fleet
        .generators()
        .iter()
        .zip(&commitment.startup)
        .map(|(g, y)| y.iter().filter(|v| **v).count() as f64 * g.c_start)
        .sum()
}

/// Minimum-cost dispatch of the committed fleet and storage over the whole
/// day, by dynamic programming over the storage SoC grid.
pub fn economic_dispatch_multi(
    fleet: &Fleet,
    commitment: &CommitmentSchedule,
    scenario: &ScenarioData,
    spec: &StorageSpec,
    e_init: f64,
    grid: &SocGrid,
) -> Result<MultiDispatch> {
    let stacks = stacks(fleet, commitment, scenario)?;
    let demand = scenario.demand();
    let wind = scenario.wind();
    let mut cache: HashMap<u64, f64> = HashMap::new();
    let mut cache_t = usize::MAX;
    let storage = optimize_on_grid(spec, grid, scenario.hours(), e_init, |t, net, cost| {
        if t != cache_t {
            cache.clear();
            cache_t = t;
        }
        let thermal = *cache.entry(net.to_bits()).or_insert_with(|| {
            stacks[t]
                .dispatch(demand[t] - net, wind[t])
                .map_or(f64::INFINITY, |d| d.cost)
        });
        -(thermal + cost)
    })
    .map_err(|e| match e {
        Error::InfeasibleDispatch(_) => Error::InfeasibleBalance {
            shortfall_mw: f64::NAN,
            detail: "no storage trajectory keeps every hour within the committed fleet's range".into(),
        },
        other => other,
    })?;

    let mut thermal = Vec::with_capacity(scenario.hours());
    let mut system_cost = startup_cost(fleet, commitment);
    let mut storage_profit = 0.0;
    for (t, d) in storage.dispatches.iter().enumerate() {
        let th = stacks[t].dispatch(demand[t] - d.net(), wind[t])?;
        let phys = d.physical_cost(spec);
        system_cost += th.cost + phys;
        storage_profit += th.price * d.net() - phys;
        thermal.push(th);
    }
    Ok(MultiDispatch {
        prices: thermal.iter().map(|d| d.price).collect(),
        storage,
        thermal,
        system_cost,
        storage_profit,
    })
}

/// Clears each hour in turn against its bids, carrying the SoC forward.
pub fn simulate_realtime_day(
    fleet: &Fleet,
    commitment: &CommitmentSchedule,
    scenario: &ScenarioData,
    spec: &StorageSpec,
    initial: &StorageState,
    bids: &[BidCurve],
) -> Result<RealtimeDay> {
    let stacks = stacks(fleet, commitment, scenario)?;
    if bids.len() < scenario.hours() {
        return Err(Error::InvalidInput(format!(
            "{} hourly bid curves for a {}-hour day",
            bids.len(),
            scenario.hours()
        )));
    }
    let mut state = initial.clone();
    let mut states = vec![state.clone()];
    let mut clearings = Vec::with_capacity(scenario.hours());
    let mut system_cost = startup_cost(fleet, commitment);
    let mut storage_profit = 0.0;
    for t in 0..scenario.hours() {
        let m = clear_priceinfluencer(
            &stacks[t],
            scenario.demand()[t],
            scenario.wind()[t],
            spec,
            &state,
            &bids[t],
        )
        .map_err(|e| match e {
            Error::InfeasibleBalance { shortfall_mw, detail } => Error::InfeasibleBalance {
                shortfall_mw,
                detail: format!("hour {}: {detail}", t + 1),
            },
            other => other,
        })?;
        let d = &m.storage.dispatch;
        let phys = d.physical_cost(spec);
        system_cost += m.thermal.cost + phys;
        storage_profit += m.storage.price * d.net() - phys;
        state = apply_dispatch(spec, &state, d)?;
        states.push(state.clone());
        clearings.push(m);
    }
    Ok(RealtimeDay {
        prices: clearings.iter().map(|c| c.storage.price).collect(),
        clearings,
        states,
        system_cost,
        storage_profit,
    })
}

/// SoC trajectory of a real-time day.
pub fn day_socs(spec: &StorageSpec, day: &RealtimeDay) -> Vec<f64> {
    day.states.iter().map(|s| soc_total(spec, s)).collect()
}
