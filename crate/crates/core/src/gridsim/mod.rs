//! Thermal system for the price-influencer study.
//!
//! Heuristic unit commitment without storage, convex economic dispatch with
//! wind taken first at zero cost, and the two storage-aware real-time
//! dispatch modes: a 24-hour look-ahead optimum and sequential single-hour
//! clearing against bids. The market interval is one hour, so storage MWh
//! per step and MW coincide.

mod commitment;
mod realtime;
mod thermal;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use commitment::{check_commitment, unit_commitment, CommitmentSchedule};
pub use realtime::{day_socs, economic_dispatch_multi, simulate_realtime_day, MultiDispatch, RealtimeDay};
pub use thermal::{thermal_dispatch, ThermalDispatch, ThermalStack};
pub(crate) use thermal::{allocate, find_price, wind_range, PriceFit, SupplyPoints};

/// Reserve share of accommodated wind.
pub const RESERVE_WIND: f64 = 0.05;
/// Reserve share of demand.
pub const RESERVE_DEMAND: f64 = 0.03;
/// Power balance tolerance (MW).
pub const BALANCE_TOL: f64 = 1e-6;

/// Upward reserve required in one hour.
pub fn reserve_requirement(wind_used: f64, demand: f64) -> f64 {
    RESERVE_WIND * wind_used + RESERVE_DEMAND * demand
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub id: String,
    /// $/MWh
    pub c_lin: f64,
    /// $/MW^2h
    pub c_quad: f64,
    /// $/h while online
    pub c_noload: f64,
    /// $ per start
    pub c_start: f64,
    pub g_min: f64,
    pub g_max: f64,
    /// Minimum up time (h).
    pub t_up: u32,
    /// Minimum down time (h).
    pub t_dn: u32,
}

impl GeneratorSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |why: &str| Err(Error::InvalidInput(format!("generator {}: {why}", self.id)));
        let costs = [self.c_lin, self.c_quad, self.c_noload, self.c_start];
        if costs.iter().any(|c| !c.is_finite() || *c < 0.0) {
            return bad("costs must be finite and nonnegative");
        }
        if !(self.g_min.is_finite() && self.g_max.is_finite()) || self.g_min < 0.0 {
            return bad("limits must be finite with g_min >= 0");
        }
        if self.g_max <= 0.0 || self.g_min > self.g_max {
            return bad("need 0 <= g_min <= g_max and g_max > 0");
        }
        if self.t_up < 1 || self.t_dn < 1 {
            return bad("minimum up and down times must be at least 1 h");
        }
        Ok(())
    }

    /// Production cost at output `g`, no-load included.
    pub fn cost(&self, g: f64) -> f64 {
        self.c_lin * g + self.c_quad * g * g + self.c_noload
    }

    pub fn marginal_cost(&self, g: f64) -> f64 {
        self.c_lin + 2.0 * self.c_quad * g
    }

    /// Average cost at full load, the priority-list key.
    pub fn full_load_average_cost(&self) -> f64 {
        self.cost(self.g_max) / self.g_max
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fleet {
    generators: Vec<GeneratorSpec>,
}

impl Fleet {
    pub fn new(generators: Vec<GeneratorSpec>) -> Result<Self> {
        if generators.is_empty() {
            return Err(Error::InvalidInput("fleet has no generators".into()));
        }
        for g in &generators {
            g.validate()?;
        }
        Ok(Self { generators })
    }

    pub fn generators(&self) -> &[GeneratorSpec] {
        &self.generators
    }

    pub fn len(&self) -> usize {
        self.generators.len()
    }

    pub fn is_empty(&self) -> bool {
        self.generators.is_empty()
    }

    pub fn capacity(&self) -> f64 {
        self.generators.iter().map(|g| g.g_max).sum()
    }
}

/// One day of hourly demand and day-ahead wind forecast (MW).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioData {
    pub id: String,
    demand: Vec<f64>,
    wind: Vec<f64>,
}

impl ScenarioData {
    pub fn new(id: impl Into<String>, demand: Vec<f64>, wind: Vec<f64>) -> Result<Self> {
        let id = id.into();
        if demand.len() != wind.len() || demand.is_empty() {
            return Err(Error::InvalidInput(format!(
                "scenario {id}: {} demand values vs {} wind values",
                demand.len(),
                wind.len()
            )));
        }
        if demand.iter().chain(&wind).any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidInput(format!(
                "scenario {id}: demand and wind must be finite and nonnegative"
            )));
        }
        Ok(Self { id, demand, wind })
    }

    pub fn demand(&self) -> &[f64] {
        &self.demand
    }

    pub fn wind(&self) -> &[f64] {
        &self.wind
    }

    pub fn hours(&self) -> usize {
        self.demand.len()
    }

    pub fn peak_demand(&self) -> f64 {
        self.demand.iter().cloned().fold(0.0, f64::max)
    }
}
