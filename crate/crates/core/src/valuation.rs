//! Marginal value-to-go of stored energy by backward recursion.
//!
//! `q_t(e)` is the marginal opportunity value ($/MWh) of energy held at SoC
//! `e` at the end of step `t`. Starting from `q_T = 0`, each earlier curve is
//! obtained point-wise from the next one with a five-case threshold rule that
//! compares the step price against the charge and discharge thresholds
//! implied by `q_t`. Storage parameters are those of the segment owning the
//! input SoC.
//!
//! The curves live on a uniform SoC grid. Lookahead points that fall above the
//! top of the grid read as zero (no room to charge) and points below the bottom
//! read as `+inf` (no energy to sell), so the boundary cases reduce to the
//! energy-limited answers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::storage::StorageSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceSeries {
    step_minutes: u32,
    prices: Vec<f64>,
}

impl PriceSeries {
    pub fn new(step_minutes: u32, prices: Vec<f64>) -> Result<Self> {
        if step_minutes == 0 {
            return Err(Error::InvalidInput("price step must be positive".into()));
        }
        if let Some(i) = prices.iter().position(|p| !p.is_finite()) {
            return Err(Error::InvalidInput(format!("price {i} is not finite")));
        }
        Ok(Self {
            step_minutes,
            prices,
        })
    }

    pub fn step_minutes(&self) -> u32 {
        self.step_minutes
    }

    pub fn step_hours(&self) -> f64 {
        self.step_minutes as f64 / 60.0
    }

    pub fn prices(&self) -> &[f64] {
        &self.prices
    }

    pub fn len(&self) -> usize {
        self.prices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prices.is_empty()
    }

    /// Steps per hour, when the step divides an hour.
    pub fn steps_per_hour(&self) -> Option<usize> {
        (60 % self.step_minutes == 0).then(|| (60 / self.step_minutes) as usize)
    }
}

/// Piecewise-constant refinement of `series` to `target_step_minutes`.
pub fn upsample_prices(series: &PriceSeries, target_step_minutes: u32) -> Result<PriceSeries> {
    if target_step_minutes == 0 || series.step_minutes % target_step_minutes != 0 {
        return Err(Error::InvalidInput(format!(
            "target step {target_step_minutes} min does not divide {} min",
            series.step_minutes
        )));
    }
    let k = (series.step_minutes / target_step_minutes) as usize;
    let prices = series
        .prices
        .iter()
        .flat_map(|&p| std::iter::repeat(p).take(k))
        .collect();
    PriceSeries::new(target_step_minutes, prices)
}

/// Uniform SoC sample points over `[lo, hi]`, both ends included.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SocGrid {
    lo: f64,
    hi: f64,
    spacing: f64,
    points: usize,
}

pub(crate) enum Probe {
    Below,
    Above,
    At(usize),
}

impl SocGrid {
    pub fn uniform(lo: f64, hi: f64, points: usize) -> Result<Self> {
        if points == 0 || !lo.is_finite() || !hi.is_finite() || hi < lo {
            return Err(Error::Grid(format!("cannot build {points} points over [{lo}, {hi}]")));
        }
        let spacing = if points == 1 {
            0.0
        } else {
            (hi - lo) / (points - 1) as f64
        };
        Ok(Self {
            lo,
            hi: if points == 1 { lo } else { hi },
            spacing,
            points,
        })
    }

    /// Grid spanning the whole SoC range of `spec` with `points` samples.
    pub fn for_spec(spec: &StorageSpec, points: usize) -> Result<Self> {
        Self::uniform(spec.e_min(), spec.e_max(), points)
    }

    pub fn points(&self) -> usize {
        self.points
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn value(&self, i: usize) -> f64 {
        if i + 1 == self.points {
            self.hi
        } else {
            self.lo + self.spacing * i as f64
        }
    }

    pub fn values(&self) -> Vec<f64> {
        (0..self.points).map(|i| self.value(i)).collect()
    }

    /// Signed nearest index, ties toward the lower point.
    fn nearest_signed(&self, e: f64) -> i64 {
        if self.points == 1 || self.spacing == 0.0 {
            return if e < self.lo - 1e-12 {
                -1
            } else if e > self.lo + 1e-12 {
                1
            } else {
                0
            };
        }
        let r = (e - self.lo) / self.spacing;
        (r - 0.5 - 1e-9).ceil() as i64
    }

    pub(crate) fn probe(&self, e: f64) -> Probe {
        let k = self.nearest_signed(e);
        if k < 0 {
            Probe::Below
        } else if k as usize >= self.points {
            Probe::Above
        } else {
            Probe::At(k as usize)
        }
    }

    /// Nearest grid index to `e`, clamped into the grid.
    pub fn nearest(&self, e: f64) -> usize {
        self.nearest_signed(e).clamp(0, self.points as i64 - 1) as usize
    }
}

/// Uniform grid at `points_per_mwh` density spanning `[E_0, E_S]`.
///
/// The spacing must be finer than the smallest charge move `P_s * eta_p_s`.
pub fn build_grid(spec: &StorageSpec, points_per_mwh: f64) -> Result<SocGrid> {
    if !(points_per_mwh > 0.0) || !points_per_mwh.is_finite() {
        return Err(Error::Grid(format!("invalid density {points_per_mwh}")));
    }
    let range = spec.capacity();
    let intervals = ((range * points_per_mwh) - 1e-9).ceil().max(1.0) as usize;
    let grid = SocGrid::uniform(spec.e_min(), spec.e_max(), intervals + 1)?;
    check_resolution(spec, &grid)?;
    Ok(grid)
}

/// Rejects grids too coarse for the one-step recursion, which probes the
/// nearest point after a full-rate charge.
pub fn check_resolution(spec: &StorageSpec, grid: &SocGrid) -> Result<()> {
    let finest = spec
        .segments()
        .iter()
        .map(|s| s.p_rating * s.eta_p)
        .fold(f64::INFINITY, f64::min);
    if grid.spacing() >= finest {
        return Err(Error::Grid(format!(
            "spacing {} MWh is not finer than the smallest charge move {finest} MWh",
            grid.spacing()
        )));
    }
    Ok(())
}

/// Marginal value curves `q_0 .. q_T` on a SoC grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueCurve {
    grid: SocGrid,
    step_minutes: u32,
    steps: usize,
    q: Vec<f64>,
}

impl ValueCurve {
    pub fn grid(&self) -> &SocGrid {
        &self.grid
    }

    pub fn step_minutes(&self) -> u32 {
        self.step_minutes
    }

    /// Horizon length `T`; curves exist for `t = 0..=T`.
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn q(&self, t: usize) -> &[f64] {
        let n = self.grid.points();
        &self.q[t * n..(t + 1) * n]
    }
}

/// Value at the grid point nearest `e` (ties toward lower SoC).
pub fn q_lookup(curve: &ValueCurve, t: usize, e: f64) -> Result<f64> {
    let g = curve.grid();
    if t > curve.steps {
        return Err(Error::OutOfRange(format!("step {t} beyond horizon {}", curve.steps)));
    }
    if !e.is_finite() || e < g.lo() - 1e-9 || e > g.hi() + 1e-9 {
        return Err(Error::OutOfRange(format!(
            "SoC {e} outside [{}, {}]",
            g.lo(),
            g.hi()
        )));
    }
    Ok(curve.q(t)[g.nearest(e)])
}

struct PointRule {
    cost: f64,
    eta_p: f64,
    eta_d: f64,
    up: Probe,
    down: Probe,
}

fn read(q: &[f64], probe: &Probe) -> f64 {
    match probe {
        Probe::Below => f64::INFINITY,
        Probe::Above => 0.0,
        Probe::At(k) => q[*k],
    }
}

/// One backward step at a single SoC point.
#[inline]
fn step_value(price: f64, here: f64, rule: &PointRule, q_next: &[f64]) -> f64 {
    let up = read(q_next, &rule.up);
    if price <= up * rule.eta_p {
        return up;
    }
    if price <= here * rule.eta_p {
        return price / rule.eta_p;
    }
    if price < 0.0 {
        // Discharging at a negative price is never allowed.
        return here;
    }
    if price <= (here / rule.eta_d + rule.cost).max(0.0) {
        return here;
    }
    let down = read(q_next, &rule.down);
    if price <= (down / rule.eta_d + rule.cost).max(0.0) {
        return (price - rule.cost) * rule.eta_d;
    }
    down
}

/// Runs the recursion and hands each `q_t` to `visit`, from `t = T` down to `0`.
pub fn backward_induction_with<F>(
    spec: &StorageSpec,
    prices: &PriceSeries,
    grid: &SocGrid,
    mut visit: F,
) -> Result<()>
where
    F: FnMut(usize, &[f64]),
{
    if prices.is_empty() {
        return Err(Error::InvalidInput("empty price series".into()));
    }
    let rules: Vec<PointRule> = (0..grid.points())
        .map(|i| {
            let e = grid.value(i);
            let seg = &spec.segments()[spec.segment_at(e)];
            PointRule {
                cost: seg.cost,
                eta_p: seg.eta_p,
                eta_d: seg.eta_d,
                up: grid.probe(e + seg.p_rating * seg.eta_p),
                down: grid.probe(e - seg.d_rating / seg.eta_d),
            }
        })
        .collect();

    let n = grid.points();
    let horizon = prices.len();
    let mut next = vec![0.0; n];
    let mut cur = vec![0.0; n];
    visit(horizon, &next);
    for t in (1..=horizon).rev() {
        let price = prices.prices()[t - 1];
        for (i, rule) in rules.iter().enumerate() {
            cur[i] = step_value(price, next[i], rule, &next);
        }
        std::mem::swap(&mut cur, &mut next);
        visit(t - 1, &next);
    }
    Ok(())
}

/// Full set of value curves for `prices` on `grid`.
pub fn backward_induction(
    spec: &StorageSpec,
    prices: &PriceSeries,
    grid: &SocGrid,
) -> Result<ValueCurve> {
    let n = grid.points();
    let steps = prices.len();
    let mut q = vec![0.0; (steps + 1) * n];
    backward_induction_with(spec, prices, grid, |t, qt| {
        q[t * n..(t + 1) * n].copy_from_slice(qt);
    })?;
    Ok(ValueCurve {
        grid: *grid,
        step_minutes: prices.step_minutes(),
        steps,
        q,
    })
}
