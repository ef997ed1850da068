//! Convex economic dispatch of the online thermal units.
//!
//! Supply at a given price is monotone in the price: a quadratic unit sits at
//! `(lambda - C^l) / 2C^q` clamped to its limits, a linear unit jumps from
//! `g_min` to `g_max` at `lambda = C^l`. Between consecutive breakpoints the
//! total is affine in the price, so the clearing price is found exactly by a
//! search over breakpoints and one linear solve.

use serde::{Deserialize, Serialize};

use super::{GeneratorSpec, BALANCE_TOL};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThermalDispatch {
    /// MW per fleet unit; zero for offline units.
    pub output: Vec<f64>,
    pub wind_used: f64,
    /// System incremental cost ($/MWh).
    pub price: f64,
    /// Production cost of the online units including no-load ($/h).
    pub cost: f64,
}

/// Left and right limits of a monotone supply curve at candidate prices.
pub(crate) struct SupplyPoints<'a, L, H> {
    pub prices: &'a [f64],
    pub lo: L,
    pub hi: H,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum PriceFit {
    Price(f64),
    /// Demand exceeds the largest supply by this many MW.
    Short(f64),
    /// Smallest supply exceeds demand by this many MW.
    Excess(f64),
}

/// Price at which supply meets `demand`. Prices must be sorted and `lo`/`hi`
/// give the left/right limits of total supply there.
pub(crate) fn find_price<L, H>(points: &SupplyPoints<'_, L, H>, demand: f64) -> PriceFit
where
    L: Fn(usize) -> f64,
    H: Fn(usize) -> f64,
{
    let n = points.prices.len();
    let lo0 = (points.lo)(0);
    if demand < lo0 - BALANCE_TOL {
        return PriceFit::Excess(lo0 - demand);
    }
    let top = (points.hi)(n - 1);
    if demand > top + BALANCE_TOL {
        return PriceFit::Short(demand - top);
    }
    // First breakpoint whose right limit covers demand.
    let (mut a, mut b) = (0, n - 1);
    while a < b {
        let m = (a + b) / 2;
        if (points.hi)(m) < demand {
            a = m + 1;
        } else {
            b = m;
        }
    }
    let mut k = a;
    let lo_k = (points.lo)(k);
    if k == 0 || lo_k <= demand {
        // Where supply is flat at the demand, report the highest clearing
        // price: the cost of the next MW.
        while k + 1 < n && (points.lo)(k + 1) <= demand + 1e-9 {
            k += 1;
        }
        return PriceFit::Price(points.prices[k]);
    }
    let hi_prev = (points.hi)(k - 1);
    let (p0, p1) = (points.prices[k - 1], points.prices[k]);
    let frac = ((demand - hi_prev) / (lo_k - hi_prev)).clamp(0.0, 1.0);
    PriceFit::Price(p0 + frac * (p1 - p0))
}

pub(crate) fn unit_range(g: &GeneratorSpec, price: f64) -> (f64, f64) {
    if g.c_quad > 0.0 {
        let x = ((price - g.c_lin) / (2.0 * g.c_quad)).clamp(g.g_min, g.g_max);
        (x, x)
    } else if price < g.c_lin {
        (g.g_min, g.g_min)
    } else if price > g.c_lin {
        (g.g_max, g.g_max)
    } else {
        (g.g_min, g.g_max)
    }
}

/// Wind offered at zero cost: fully taken at positive prices, curtailable at zero.
pub(crate) fn wind_range(wind: f64, price: f64) -> (f64, f64) {
    if price > 0.0 {
        (wind, wind)
    } else {
        (0.0, wind)
    }
}

/// Places `demand` within per-component ranges, filling components in order.
pub(crate) fn allocate(ranges: &[(f64, f64)], demand: f64) -> Vec<f64> {
    let mut out: Vec<f64> = ranges.iter().map(|r| r.0).collect();
    let mut residual = demand - out.iter().sum::<f64>();
    for (x, r) in out.iter_mut().zip(ranges) {
        if residual <= 0.0 {
            break;
        }
        let add = (r.1 - r.0).min(residual);
        *x += add;
        residual -= add;
    }
    out
}

/// Online units of a fleet with their precomputed supply breakpoints.
#[derive(Debug, Clone)]
pub struct ThermalStack {
    fleet_len: usize,
    online: Vec<usize>,
    units: Vec<GeneratorSpec>,
    prices: Vec<f64>,
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl ThermalStack {
    pub fn new(fleet: &[GeneratorSpec], online: &[bool]) -> Self {
        let idx: Vec<usize> = (0..fleet.len()).filter(|&i| online.get(i).copied().unwrap_or(false)).collect();
        let units: Vec<GeneratorSpec> = idx.iter().map(|&i| fleet[i].clone()).collect();
        let mut prices = vec![0.0];
        for g in &units {
            if g.c_quad > 0.0 {
                prices.push(g.marginal_cost(g.g_min));
                prices.push(g.marginal_cost(g.g_max));
            } else {
                prices.push(g.c_lin);
            }
        }
        prices.retain(|p| *p >= 0.0);
        prices.sort_by(f64::total_cmp);
        prices.dedup();
        let mut stack = Self {
            fleet_len: fleet.len(),
            online: idx,
            units,
            prices,
            lo: Vec::new(),
            hi: Vec::new(),
        };
        let (lo, hi) = stack.prices.iter().map(|&p| stack.range_at(p)).unzip();
        stack.lo = lo;
        stack.hi = hi;
        stack
    }

    /// Every unit online.
    pub fn all_online(fleet: &[GeneratorSpec]) -> Self {
        Self::new(fleet, &vec![true; fleet.len()])
    }

    pub fn online_units(&self) -> &[usize] {
        &self.online
    }

    pub fn min_output(&self) -> f64 {
        self.units.iter().map(|g| g.g_min).sum()
    }

    pub fn max_output(&self) -> f64 {
        self.units.iter().map(|g| g.g_max).sum()
    }

    /// Sorted supply breakpoints (zero included).
    pub fn breakpoints(&self) -> &[f64] {
        &self.prices
    }

    /// Left and right limits of thermal output at `price`.
    pub fn range_at(&self, price: f64) -> (f64, f64) {
        self.units.iter().fold((0.0, 0.0), |acc, g| {
            let r = unit_range(g, price);
            (acc.0 + r.0, acc.1 + r.1)
        })
    }

    pub(crate) fn unit_ranges(&self, price: f64) -> Vec<(f64, f64)> {
        self.units.iter().map(|g| unit_range(g, price)).collect()
    }

    /// Spreads `outputs` for online units back onto fleet indices, nudging the
    /// first interior unit so the total matches `target` exactly.
    pub(crate) fn finish(&self, mut outputs: Vec<f64>, target: f64, price: f64, wind_used: f64) -> ThermalDispatch {
        let mismatch = target - outputs.iter().sum::<f64>();
        if mismatch != 0.0 {
            if let Some(i) = (0..outputs.len()).find(|&i| {
                let g = &self.units[i];
                outputs[i] + mismatch >= g.g_min && outputs[i] + mismatch <= g.g_max
            }) {
                outputs[i] += mismatch;
            }
        }
        let mut output = vec![0.0; self.fleet_len];
        let mut cost = 0.0;
        for ((&i, g), x) in self.online.iter().zip(&self.units).zip(&outputs) {
            output[i] = *x;
            cost += g.cost(*x);
        }
        ThermalDispatch {
            output,
            wind_used,
            price,
            cost,
        }
    }

    /// Economic dispatch of `load` with up to `wind` MW of free wind.
    pub fn dispatch(&self, load: f64, wind: f64) -> Result<ThermalDispatch> {
        let points = SupplyPoints {
            prices: &self.prices,
            lo: |k: usize| self.lo[k] + if self.prices[k] > 0.0 { wind } else { 0.0 },
            hi: |k: usize| self.hi[k] + wind,
        };
        let price = match find_price(&points, load) {
            PriceFit::Price(p) => p,
            PriceFit::Short(mw) => {
                return Err(Error::InfeasibleBalance {
                    shortfall_mw: mw,
                    detail: format!(
                        "load {load:.3} MW above online capacity {:.3} MW plus wind {wind:.3} MW",
                        self.max_output()
                    ),
                })
            }
            PriceFit::Excess(mw) => {
                return Err(Error::InfeasibleBalance {
                    shortfall_mw: -mw,
                    detail: format!(
                        "load {load:.3} MW below online minimum generation {:.3} MW",
                        self.min_output()
                    ),
                })
            }
        };
        let mut ranges = vec![wind_range(wind, price)];
        ranges.extend(self.unit_ranges(price));
        let alloc = allocate(&ranges, load);
        let wind_used = alloc[0];
        Ok(self.finish(alloc[1..].to_vec(), load - wind_used, price, wind_used))
    }
}

/// Economic dispatch of the online fleet for one hour.
pub fn thermal_dispatch(stack: &ThermalStack, load: f64, wind: f64) -> Result<ThermalDispatch> {
    stack.dispatch(load, wind)
}
