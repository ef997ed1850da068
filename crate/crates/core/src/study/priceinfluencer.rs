//! Price-influencer sweep: storage large enough to move the price, over
//! storage capacities and bid segment counts.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bidding::{BidCurve, HourAveraging, HourlyBidder, SamplingPlan, BID_GAP};
use crate::error::{Error, Result};
use crate::gridsim::{economic_dispatch_multi, simulate_realtime_day, unit_commitment, CommitmentSchedule, Fleet, ScenarioData};
use crate::storage::{StorageSpec, StorageState};
use crate::valuation::{backward_induction_with, PriceSeries, SocGrid};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfluencerConfig {
    /// Storage power rating as a fraction of the peak demand of the ensemble.
    pub capacity_fractions: Vec<f64>,
    pub segment_counts: Vec<usize>,
    pub duration_hours: f64,
    pub efficiency: f64,
    pub discharge_cost: f64,
    pub grid_points: usize,
    pub samples: SamplingPlan,
    /// Starting SoC as a fraction of the energy capacity.
    pub initial_soc: f64,
}

impl Default for InfluencerConfig {
    fn default() -> Self {
        Self {
            capacity_fractions: vec![0.0, 0.05, 0.1, 0.15, 0.2],
            segment_counts: vec![1, 2, 5, 10],
            duration_hours: 4.0,
            efficiency: 0.9,
            discharge_cost: 10.0,
            grid_points: 401,
            samples: SamplingPlan::default(),
            initial_soc: 0.0,
        }
    }
}

/// Ensemble averages for one model at one storage size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub capacity_fraction: f64,
    pub power_mw: f64,
    pub energy_mwh: f64,
    /// "Multi" or "RTD-k".
    pub model: String,
    /// Bid segments for RTD rows.
    pub segments: Option<usize>,
    pub system_cost: f64,
    /// System cost over the Multi cost at the same size.
    pub normalized_cost: f64,
    pub average_price: f64,
    /// Standard deviation of the hourly price within a day, averaged over scenarios.
    pub price_std: f64,
    pub storage_profit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub scenarios: usize,
    pub peak_demand_mw: f64,
    /// Ensemble-average cost with no storage ($/day).
    pub no_storage_cost: f64,
    pub rows: Vec<SweepRow>,
    pub seconds: f64,
}

impl SweepReport {
    pub fn row(&self, capacity_fraction: f64, segments: Option<usize>) -> Option<&SweepRow> {
        self.rows
            .iter()
            .find(|r| r.segments == segments && (r.capacity_fraction - capacity_fraction).abs() < 1e-12)
    }
}

/// Per-scenario outcome of one model.
#[derive(Debug, Clone, PartialEq)]
struct Outcome {
    system_cost: f64,
    prices: Vec<f64>,
    storage_profit: f64,
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len().max(1) as f64
}

fn std_dev(x: &[f64]) -> f64 {
    let m = mean(x);
    (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / x.len().max(1) as f64).sqrt()
}

fn check_config(cfg: &InfluencerConfig) -> Result<()> {
    if cfg.capacity_fractions.iter().any(|f| !(0.0..=1.0).contains(f)) {
        return Err(Error::InvalidInput("capacity fractions must lie in [0, 1]".into()));
    }
    if cfg.segment_counts.contains(&0) {
        return Err(Error::InvalidInput("segment counts must be at least 1".into()));
    }
    if !(cfg.duration_hours > 0.0) || !(cfg.efficiency > 0.0 && cfg.efficiency <= 1.0) || !(cfg.discharge_cost >= 0.0) {
        return Err(Error::InvalidInput("duration must be positive, efficiency in (0, 1], cost nonnegative".into()));
    }
    if cfg.grid_points < 2 || !(0.0..=1.0).contains(&cfg.initial_soc) {
        return Err(Error::InvalidInput("grid needs 2+ points and the initial SoC must lie in [0, 1]".into()));
    }
    Ok(())
}

/// Hourly bids for a `k`-segment model, valued against the no-storage prices.
pub fn influencer_bids(spec: &StorageSpec, prices: &[f64], k: usize, grid_points: usize, samples: SamplingPlan) -> Result<Vec<BidCurve>> {
    let series = PriceSeries::new(60, prices.to_vec())?;
    let grid = SocGrid::for_spec(spec, grid_points)?;
    let market = spec.aggregate(k)?;
    let mut bidder = HourlyBidder::new(&market, &grid, 60, series.len(), samples, HourAveraging::IntervalMean)?;
    backward_induction_with(spec, &series, &grid, |t, q| bidder.observe(t, q))?;
    Ok(bidder.finish(BID_GAP))
}

fn run_scenario(
    fleet: &Fleet,
    scenario: &ScenarioData,
    commitment: &CommitmentSchedule,
    spec: Option<&StorageSpec>,
    cfg: &InfluencerConfig,
) -> Result<(Outcome, Vec<Outcome>)> {
    let Some(spec) = spec else {
        let base = Outcome {
            system_cost: commitment.cost,
            prices: commitment.prices.clone(),
            storage_profit: 0.0,
        };
        return Ok((base.clone(), vec![base; cfg.segment_counts.len()]));
    };
    let e_init = spec.e_min() + cfg.initial_soc * spec.capacity();
    let grid = SocGrid::for_spec(spec, cfg.grid_points)?;
    let multi = economic_dispatch_multi(fleet, commitment, scenario, spec, e_init, &grid)?;
    let multi = Outcome {
        system_cost: multi.system_cost,
        prices: multi.prices,
        storage_profit: multi.storage_profit,
    };
    let mut rtd = Vec::with_capacity(cfg.segment_counts.len());
    for &k in &cfg.segment_counts {
        let bids = influencer_bids(spec, &commitment.prices, k, cfg.grid_points, cfg.samples)?;
        let market = spec.aggregate(k)?;
        let initial = StorageState::from_soc(&market, e_init)?;
        let day = simulate_realtime_day(fleet, commitment, scenario, &market, &initial, &bids)?;
        rtd.push(Outcome {
            system_cost: day.system_cost,
            prices: day.prices,
            storage_profit: day.storage_profit,
        });
    }
    Ok((multi, rtd))
}

fn summarize(fraction: f64, spec: Option<&StorageSpec>, power: f64, model: String, segments: Option<usize>, outcomes: &[&Outcome], multi_cost: f64) -> SweepRow {
    let system_cost = mean(&outcomes.iter().map(|o| o.system_cost).collect::<Vec<_>>());
    let all_prices: Vec<f64> = outcomes.iter().flat_map(|o| o.prices.iter().copied()).collect();
    SweepRow {
        capacity_fraction: fraction,
        power_mw: power,
        energy_mwh: spec.map_or(0.0, |s| s.capacity()),
        model,
        segments,
        system_cost,
        normalized_cost: system_cost / multi_cost,
        average_price: mean(&all_prices),
        price_std: mean(&outcomes.iter().map(|o| std_dev(&o.prices)).collect::<Vec<_>>()),
        storage_profit: mean(&outcomes.iter().map(|o| o.storage_profit).collect::<Vec<_>>()),
    }
}

/// Commits the fleet once per scenario without storage, then for every
/// storage size runs the look-ahead dispatch and the hour-by-hour
/// bid-based clearing for each segment count. Scenarios run in parallel.
pub fn run_priceinfluencer_study(fleet: &Fleet, scenarios: &[ScenarioData], cfg: &InfluencerConfig) -> Result<SweepReport> {
    check_config(cfg)?;
    if scenarios.is_empty() {
        return Err(Error::InvalidInput("no scenarios".into()));
    }
    let started = Instant::now();
    let commitments = scenarios
        .par_iter()
        .map(|s| unit_commitment(fleet, s))
        .collect::<Result<Vec<_>>>()?;
    let peak = scenarios.iter().map(|s| s.peak_demand()).fold(0.0, f64::max);
    let no_storage_cost = mean(&commitments.iter().map(|c| c.cost).collect::<Vec<_>>());

    let mut rows = Vec::new();
    for &fraction in &cfg.capacity_fractions {
        let power = fraction * peak;
        let spec = if power > 0.0 {
            Some(StorageSpec::linear(power * cfg.duration_hours, power, cfg.efficiency, cfg.discharge_cost)?)
        } else {
            None
        };
        let results = scenarios
            .par_iter()
            .zip(&commitments)
            .map(|(s, c)| run_scenario(fleet, s, c, spec.as_ref(), cfg))
            .collect::<Result<Vec<_>>>()?;
        let multi: Vec<&Outcome> = results.iter().map(|r| &r.0).collect();
        let multi_cost = mean(&multi.iter().map(|o| o.system_cost).collect::<Vec<_>>());
        rows.push(summarize(fraction, spec.as_ref(), power, "Multi".into(), None, &multi, multi_cost));
        for (j, &k) in cfg.segment_counts.iter().enumerate() {
            let rtd: Vec<&Outcome> = results.iter().map(|r| &r.1[j]).collect();
            rows.push(summarize(fraction, spec.as_ref(), power, format!("RTD-{k}"), Some(k), &rtd, multi_cost));
        }
    }
    Ok(SweepReport {
        scenarios: scenarios.len(),
        peak_demand_mw: peak,
        no_storage_cost,
        rows,
        seconds: started.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::study::synthetic::{synthetic_fleet, synthetic_scenarios};

    #[test]
    fn zero_capacity_models_coincide() {
        let fleet = synthetic_fleet(1).unwrap();
        let scen = synthetic_scenarios(1, 2).unwrap();
        let cfg = InfluencerConfig { capacity_fractions: vec![0.0], ..Default::default() };
        let r = run_priceinfluencer_study(&fleet, &scen, &cfg).unwrap();
        assert_eq!(r.rows.len(), 5);
        for row in &r.rows {
            assert!((row.normalized_cost - 1.0).abs() < 1e-12);
            assert!((row.system_cost - r.no_storage_cost).abs() < 1e-9);
            assert_eq!(row.storage_profit, 0.0);
        }
    }

    #[test]
    fn storage_lowers_cost_and_multi_is_cheapest() {
        let fleet = synthetic_fleet(2).unwrap();
        let scen = synthetic_scenarios(2, 2).unwrap();
        let cfg = InfluencerConfig { capacity_fractions: vec![0.1], grid_points: 201, ..Default::default() };
        let r = run_priceinfluencer_study(&fleet, &scen, &cfg).unwrap();
        let multi = r.row(0.1, None).unwrap();
        assert!(multi.system_cost <= r.no_storage_cost + 1e-6);
        for k in [1, 2, 5, 10] {
            let row = r.row(0.1, Some(k)).unwrap();
            assert!(row.normalized_cost >= 1.0 - 1e-3, "RTD-{k} normalized {}", row.normalized_cost);
        }
    }

    #[test]
    fn rejects_bad_config() {
        let fleet = synthetic_fleet(1).unwrap();
        let scen = synthetic_scenarios(1, 1).unwrap();
        let cfg = InfluencerConfig { segment_counts: vec![0], ..Default::default() };
        assert!(run_priceinfluencer_study(&fleet, &scen, &cfg).is_err());
        assert!(run_priceinfluencer_study(&fleet, &[], &InfluencerConfig::default()).is_err());
    }
}
