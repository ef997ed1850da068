//! Price-taker arbitrage backtests: the look-ahead optimum against
//! hourly-bid real-time dispatch with `k` SoC segments.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::benchmark::multi_period_dispatch_refined;
use crate::bidding::{BidCurve, HourAveraging, HourlyBidder, SamplingPlan, BID_GAP};
use crate::clearing::clear_pricetaker;
use crate::error::{Error, Result};
use crate::storage::{apply_dispatch, project_dispatch, soc_total, Dispatch, StorageSpec, StorageState};
use crate::valuation::{backward_induction_with, check_resolution, upsample_prices, PriceSeries, SocGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MarketModel {
    /// Perfect-foresight multi-period dispatch.
    Multi,
    /// Real-time dispatch with this many SoC-segment bid pairs per hour.
    Rtd(usize),
}

impl fmt::Display for MarketModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Multi => f.write_str("Multi"),
            Self::Rtd(k) => write!(f, "RTD-{k}"),
        }
    }
}

impl FromStr for MarketModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        if lower == "multi" {
            return Ok(Self::Multi);
        }
        let k = lower
            .strip_prefix("rtd-")
            .or_else(|| lower.strip_prefix("rtd"))
            .and_then(|k| k.parse::<usize>().ok())
            .filter(|k| *k >= 1)
            .ok_or_else(|| Error::InvalidInput(format!("unknown market model '{s}' (expected multi or rtd-<k>, k >= 1)")))?;
        Ok(Self::Rtd(k))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PriceTakerConfig {
    /// SoC grid points for valuation and the look-ahead DP.
    pub grid_points: usize,
    pub samples: SamplingPlan,
    pub averaging: HourAveraging,
    /// Valuation step in minutes; `None` values at the price step.
    pub valuation_step: Option<u32>,
    /// Starting SoC as a fraction of the usable range.
    pub initial_soc: f64,
    pub bid_gap: f64,
}

impl Default for PriceTakerConfig {
    fn default() -> Self {
        Self {
            grid_points: 501,
            samples: SamplingPlan::default(),
            averaging: HourAveraging::default(),
            valuation_step: None,
            initial_soc: 0.0,
            bid_gap: BID_GAP,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfitReport {
    pub model: String,
    /// `sum lambda d` ($).
    pub revenue: f64,
    /// Charging payments plus physical discharge cost ($).
    pub cost: f64,
    pub profit: f64,
    /// Profit as a percentage of the Multi run on the same inputs.
    pub profit_ratio: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelRun {
    pub model: MarketModel,
    pub report: ProfitReport,
    /// `T + 1` SoC values (MWh).
    pub socs: Vec<f64>,
    /// Realized dispatch per interval, on the physical spec.
    pub dispatches: Vec<Dispatch>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Settlement {
    pub revenue: f64,
    pub cost: f64,
    pub profit: f64,
}

/// Recomputes revenue and cost of `dispatches` from the segment quantities.
pub fn settle(spec: &StorageSpec, prices: &[f64], dispatches: &[Dispatch]) -> Result<Settlement> {
    if prices.len() != dispatches.len() {
        return Err(Error::InvalidInput(format!(
            "{} prices for {} dispatches",
            prices.len(),
            dispatches.len()
        )));
    }
    let mut revenue = 0.0;
    let mut cost = 0.0;
    for (lambda, x) in prices.iter().zip(dispatches) {
        let d: f64 = x.d_seg.iter().sum();
        let p: f64 = x.p_seg.iter().sum();
        revenue += lambda * d;
        cost += lambda * p;
        for (ds, seg) in x.d_seg.iter().zip(spec.segments()) {
            cost += ds * seg.cost;
        }
    }
    Ok(Settlement { revenue, cost, profit: revenue - cost })
}

/// Share of intervals whose end-of-step SoC falls in each of `bins`
/// equal-width bins of the usable range.
pub fn soc_histogram(spec: &StorageSpec, socs: &[f64], bins: usize) -> Vec<f64> {
    let mut counts = vec![0usize; bins.max(1)];
    let tail = if socs.len() > 1 { &socs[1..] } else { socs };
    for e in tail {
        let x = ((e - spec.e_min()) / spec.capacity()).clamp(0.0, 1.0);
        let b = ((x * counts.len() as f64) as usize).min(counts.len() - 1);
        counts[b] += 1;
    }
    let n = tail.len().max(1) as f64;
    counts.into_iter().map(|c| c as f64 / n).collect()
}

/// Share of intervals ending with SoC fraction in `[lo, hi]`.
pub fn band_share(spec: &StorageSpec, socs: &[f64], lo: f64, hi: f64) -> f64 {
    let tail = if socs.len() > 1 { &socs[1..] } else { socs };
    let tol = 1e-9;
    let inside = tail
        .iter()
        .filter(|e| {
            let x = (*e - spec.e_min()) / spec.capacity();
            x >= lo - tol && x <= hi + tol
        })
        .count();
    inside as f64 / tail.len().max(1) as f64
}

fn check_config(cfg: &PriceTakerConfig) -> Result<()> {
    if cfg.grid_points < 2 {
        return Err(Error::InvalidInput("grid needs at least 2 points".into()));
    }
    if !(0.0..=1.0).contains(&cfg.initial_soc) {
        return Err(Error::InvalidInput(format!("initial SoC fraction {} outside [0, 1]", cfg.initial_soc)));
    }
    if !(cfg.bid_gap >= 0.0) {
        return Err(Error::InvalidInput("bid gap must be nonnegative".into()));
    }
    Ok(())
}

fn report(model: MarketModel, s: Settlement, started: Instant) -> ProfitReport {
    ProfitReport {
        model: model.to_string(),
        revenue: s.revenue,
        cost: s.cost,
        profit: s.profit,
        profit_ratio: None,
        seconds: started.elapsed().as_secs_f64(),
    }
}

/// Look-ahead optimum from the refined DP. `spec_mw` carries ratings in MW.
pub fn run_multi(spec_mw: &StorageSpec, prices: &PriceSeries, cfg: &PriceTakerConfig) -> Result<ModelRun> {
    check_config(cfg)?;
    let started = Instant::now();
    let spec = spec_mw.scale_ratings(prices.step_hours());
    let grid = SocGrid::for_spec(&spec, cfg.grid_points)?;
    let e_init = spec.e_min() + cfg.initial_soc * spec.capacity();
    let schedule = multi_period_dispatch_refined(&spec, prices, e_init, &grid)?;
    let settlement = settle(&spec, prices.prices(), &schedule.dispatches)?;
    Ok(ModelRun {
        model: MarketModel::Multi,
        report: report(MarketModel::Multi, settlement, started),
        socs: schedule.socs(&spec),
        dispatches: schedule.dispatches,
    })
}

/// Hourly bids for a `k`-segment market model of the storage, designed from
/// the value curves of the true (physical) model.
pub fn design_bids(spec_mw: &StorageSpec, prices: &PriceSeries, k: usize, cfg: &PriceTakerConfig) -> Result<Vec<BidCurve>> {
    check_config(cfg)?;
    let (val_prices, step) = match cfg.valuation_step {
        Some(m) if m != prices.step_minutes() => (upsample_prices(prices, m)?, m),
        _ => (prices.clone(), prices.step_minutes()),
    };
    let physical = spec_mw.scale_ratings(val_prices.step_hours());
    let market = physical.aggregate(k)?;
    let grid = SocGrid::for_spec(&physical, cfg.grid_points)?;
    check_resolution(&physical, &grid)?;
    let mut bidder = HourlyBidder::new(&market, &grid, step, val_prices.len(), cfg.samples, cfg.averaging)?;
    backward_induction_with(&physical, &val_prices, &grid, |t, q| bidder.observe(t, q))?;
    Ok(bidder.finish(cfg.bid_gap))
}

/// Clears `bids` every interval on the `k`-segment market model and
/// realizes the instruction on the physical storage, projecting it onto
/// the feasible set when the physical model cannot follow it.
pub fn simulate_rtd(
    spec_mw: &StorageSpec,
    prices: &PriceSeries,
    k: usize,
    bids: &[BidCurve],
    cfg: &PriceTakerConfig,
) -> Result<(Vec<f64>, Vec<Dispatch>)> {
    check_config(cfg)?;
    let physical = spec_mw.scale_ratings(prices.step_hours());
    let market = physical.aggregate(k)?;
    let per_hour = prices
        .steps_per_hour()
        .ok_or_else(|| Error::InvalidInput(format!("a {} min step does not divide an hour", prices.step_minutes())))?;
    let hours = prices.len().div_ceil(per_hour);
    if bids.len() < hours {
        return Err(Error::InvalidInput(format!("{} bid hours for {hours} price hours", bids.len())));
    }
    let mut state = StorageState::from_soc(&physical, physical.e_min() + cfg.initial_soc * physical.capacity())?;
    let mut socs = Vec::with_capacity(prices.len() + 1);
    let mut dispatches = Vec::with_capacity(prices.len());
    socs.push(soc_total(&physical, &state));
    for (t, &lambda) in prices.prices().iter().enumerate() {
        let soc = soc_total(&physical, &state).clamp(market.e_min(), market.e_max());
        let view = StorageState::from_soc(&market, soc)?;
        let cleared = clear_pricetaker(&market, &view, &bids[t / per_hour], lambda)?;
        let x = project_dispatch(&physical, &state, cleared.dispatch.p, cleared.dispatch.d);
        state = apply_dispatch(&physical, &state, &x)?;
        socs.push(soc_total(&physical, &state));
        dispatches.push(x);
    }
    Ok((socs, dispatches))
}

/// Real-time dispatch backtest with `k` bid segments.
pub fn run_rtd(spec_mw: &StorageSpec, prices: &PriceSeries, k: usize, cfg: &PriceTakerConfig) -> Result<ModelRun> {
    let started = Instant::now();
    let bids = design_bids(spec_mw, prices, k, cfg)?;
    let (socs, dispatches) = simulate_rtd(spec_mw, prices, k, &bids, cfg)?;
    let physical = spec_mw.scale_ratings(prices.step_hours());
    let settlement = settle(&physical, prices.prices(), &dispatches)?;
    Ok(ModelRun {
        model: MarketModel::Rtd(k),
        report: report(MarketModel::Rtd(k), settlement, started),
        socs,
        dispatches,
    })
}

pub fn run_model(spec_mw: &StorageSpec, prices: &PriceSeries, model: MarketModel, cfg: &PriceTakerConfig) -> Result<ModelRun> {
    match model {
        MarketModel::Multi => run_multi(spec_mw, prices, cfg),
        MarketModel::Rtd(0) => Err(Error::InvalidInput("RTD needs at least one segment".into())),
        MarketModel::Rtd(k) => run_rtd(spec_mw, prices, k, cfg),
    }
}

/// Runs every model on the same inputs and fills in profit ratios
/// relative to Multi when Multi is among them.
pub fn run_pricetaker_study(
    spec_mw: &StorageSpec,
    prices: &PriceSeries,
    models: &[MarketModel],
    cfg: &PriceTakerConfig,
) -> Result<Vec<ModelRun>> {
    let mut runs = models
        .iter()
        .map(|m| run_model(spec_mw, prices, *m, cfg))
        .collect::<Result<Vec<_>>>()?;
    if let Some(best) = runs.iter().find(|r| r.model == MarketModel::Multi).map(|r| r.report.profit) {
        for r in &mut runs {
            r.report.profit_ratio = (best.abs() > 1e-12).then(|| 100.0 * r.report.profit / best);
        }
    }
    Ok(runs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::study::synthetic::synthetic_prices;
    use crate::study::variants::{make_storage_variant, nonlinear_template, StorageVariant};

    fn cfg() -> PriceTakerConfig {
        PriceTakerConfig { grid_points: 201, ..Default::default() }
    }

    #[test]
    fn model_names_parse() {
        assert_eq!("multi".parse::<MarketModel>().unwrap(), MarketModel::Multi);
        assert_eq!("RTD-5".parse::<MarketModel>().unwrap(), MarketModel::Rtd(5));
        assert_eq!(MarketModel::Rtd(1).to_string(), "RTD-1");
        assert!("rtd-0".parse::<MarketModel>().is_err());
        assert!("lmp".parse::<MarketModel>().is_err());
    }

    #[test]
    fn constant_prices_earn_nothing() {
        let spec = StorageSpec::linear(1.0, 0.25, 0.9, 20.0).unwrap();
        let prices = PriceSeries::new(5, vec![40.0; 288]).unwrap();
        let runs = run_pricetaker_study(&spec, &prices, &[MarketModel::Multi, MarketModel::Rtd(1), MarketModel::Rtd(5)], &cfg()).unwrap();
        for r in runs {
            assert!(r.report.profit.abs() < 1e-9, "{} earned {}", r.model, r.report.profit);
        }
    }

    #[test]
    fn settlement_matches_reports_and_multi_dominates() {
        let prices = synthetic_prices(11, 7, 5).unwrap();
        let nla = make_storage_variant(StorageVariant::Nla, &nonlinear_template()).unwrap();
        let models = [MarketModel::Multi, MarketModel::Rtd(5), MarketModel::Rtd(1)];
        let runs = run_pricetaker_study(&nla, &prices, &models, &cfg()).unwrap();
        let physical = nla.scale_ratings(prices.step_hours());
        for r in &runs {
            let s = settle(&physical, prices.prices(), &r.dispatches).unwrap();
            assert!((s.profit - r.report.profit).abs() < 1e-9);
            assert!((r.report.revenue - r.report.cost - r.report.profit).abs() < 1e-9);
            assert_eq!(r.socs.len(), prices.len() + 1);
        }
        assert!(runs[0].report.profit >= runs[1].report.profit);
        assert!(runs[0].report.profit >= runs[2].report.profit);
        assert!((runs[0].report.profit_ratio.unwrap() - 100.0).abs() < 1e-9);
    }

    #[test]
    fn rtd_replays_on_physical_model() {
        let prices = synthetic_prices(5, 2, 5).unwrap();
        let nla = nonlinear_template();
        let physical = nla.scale_ratings(prices.step_hours());
        let run = run_rtd(&nla, &prices, 1, &cfg()).unwrap();
        let mut state = StorageState::empty(&physical);
        for (x, e) in run.dispatches.iter().zip(&run.socs[1..]) {
            state = apply_dispatch(&physical, &state, x).unwrap();
            assert!((soc_total(&physical, &state) - e).abs() < 1e-12);
        }
    }

    #[test]
    fn histogram_sums_to_one() {
        let spec = StorageSpec::linear(1.0, 0.25, 0.9, 20.0).unwrap();
        let h = soc_histogram(&spec, &[0.0, 0.1, 0.5, 1.0, 0.95], 10);
        assert_eq!(h.len(), 10);
        assert!((h.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(h[9], 0.5);
        assert_eq!(band_share(&spec, &[0.0, 0.2, 0.6, 0.7], 0.2, 0.6), 2.0 / 3.0);
    }
}
