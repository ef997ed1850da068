//! Perfect-foresight multi-period dispatch on a SoC grid.
//!
//! Every grid point is a state and every move to another grid point that one
//! step of the storage model can realize is an arc, split over segments in
//! fill order. Backward dynamic programming over these arcs gives the optimal
//! trajectory up to grid resolution.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::storage::{
    apply_dispatch, charge_dispatch, discharge_dispatch, dispatch_for_delta, feasible_envelope, soc_total, Dispatch,
    StorageSpec, StorageState,
};
use crate::valuation::{PriceSeries, SocGrid};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub dispatches: Vec<Dispatch>,
    /// `T + 1` states, starting from the initial one.
    pub states: Vec<StorageState>,
    pub objective: f64,
}

impl Schedule {
    pub fn socs(&self, spec: &StorageSpec) -> Vec<f64> {
        self.states.iter().map(|s| soc_total(spec, s)).collect()
    }
}

/// Feasible one-step moves between grid points.
pub(crate) struct ArcTable {
    start: Vec<usize>,
    to: Vec<u32>,
    net: Vec<f64>,
    cost: Vec<f64>,
}

impl ArcTable {
    pub(crate) fn build(spec: &StorageSpec, grid: &SocGrid) -> Self {
        let n = grid.points();
        let mut table = ArcTable {
            start: Vec::with_capacity(n + 1),
            to: Vec::new(),
            net: Vec::new(),
            cost: Vec::new(),
        };
        for i in 0..n {
            table.start.push(table.to.len());
            let e = grid.value(i);
            let state = StorageState::from_soc(spec, e).expect("grid lies within the SoC range");
            let mut push = |j: usize, d: &Dispatch| {
                table.to.push(j as u32);
                table.net.push(d.net());
                table.cost.push(d.physical_cost(spec));
            };
            push(i, &Dispatch::idle(spec.len()));
            for j in (0..i).rev() {
                match dispatch_for_delta(spec, &state, grid.value(j) - e) {
                    Some(d) => push(j, &d),
                    None => break,
                }
            }
            for j in i + 1..n {
                match dispatch_for_delta(spec, &state, grid.value(j) - e) {
                    Some(d) => push(j, &d),
                    None => break,
                }
            }
        }
        table.start.push(table.to.len());
        table
    }

    fn arcs(&self, i: usize) -> std::ops::Range<usize> {
        self.start[i]..self.start[i + 1]
    }

    fn max_degree(&self) -> usize {
        self.start.windows(2).map(|w| w[1] - w[0]).max().unwrap_or(0)
    }
}

enum Choices {
    Narrow(Vec<u8>),
    Wide(Vec<u16>),
}

impl Choices {
    fn new(len: usize, degree: usize) -> Result<Self> {
        if degree <= u8::MAX as usize + 1 {
            Ok(Choices::Narrow(vec![0; len]))
        } else if degree <= u16::MAX as usize + 1 {
            Ok(Choices::Wide(vec![0; len]))
        } else {
            Err(Error::TooLarge(format!("{degree} arcs per grid point")))
        }
    }

    fn set(&mut self, k: usize, v: usize) {
        match self {
            Choices::Narrow(c) => c[k] = v as u8,
            Choices::Wide(c) => c[k] = v as u16,
        }
    }

    fn get(&self, k: usize) -> usize {
        match self {
            Choices::Narrow(c) => c[k] as usize,
            Choices::Wide(c) => c[k] as usize,
        }
    }
}

fn check_init(spec: &StorageSpec, e_init: f64) -> Result<()> {
    if !e_init.is_finite() || e_init < spec.e_min() - 1e-9 || e_init > spec.e_max() + 1e-9 {
        return Err(Error::OutOfRange(format!(
            "initial SoC {e_init} outside [{}, {}]",
            spec.e_min(),
            spec.e_max()
        )));
    }
    Ok(())
}

/// Backward DP over `steps` stages maximizing `sum_t reward(t, net, cost)`,
/// where `net` is the grid injection and `cost` the physical discharge cost
/// of the arc. Ties go to the earliest arc, idle first.
pub(crate) fn optimize_on_grid<R>(
    spec: &StorageSpec,
    grid: &SocGrid,
    steps: usize,
    e_init: f64,
    mut reward: R,
) -> Result<Schedule>
where
    R: FnMut(usize, f64, f64) -> f64,
{
    check_init(spec, e_init)?;
    if grid.lo() < spec.e_min() - 1e-12 || grid.hi() > spec.e_max() + 1e-12 {
        return Err(Error::Grid("grid extends beyond the storage SoC range".into()));
    }
    let n = grid.points();
    let arcs = ArcTable::build(spec, grid);
    let mut choices = Choices::new(steps * n, arcs.max_degree())?;
    let mut next = vec![0.0; n];
    let mut cur = vec![0.0; n];
    let mut stage_reward = vec![0.0; arcs.to.len()];
    for t in (0..steps).rev() {
        for (a, r) in stage_reward.iter_mut().enumerate() {
            *r = reward(t, arcs.net[a], arcs.cost[a]);
        }
        for i in 0..n {
            let range = arcs.arcs(i);
            let first = range.start;
            let mut best = f64::NEG_INFINITY;
            let mut pick = 0;
            for a in range {
                let v = stage_reward[a] + next[arcs.to[a] as usize];
                if v > best {
                    best = v;
                    pick = a - first;
                }
            }
            cur[i] = best;
            choices.set(t * n + i, pick);
        }
        std::mem::swap(&mut cur, &mut next);
    }

    let mut i = grid.nearest(e_init);
    if !next[i].is_finite() {
        return Err(Error::InfeasibleDispatch("no feasible trajectory from the initial SoC".into()));
    }
    let mut state = StorageState::from_soc(spec, grid.value(i))?;
    let mut states = vec![state.clone()];
    let mut dispatches = Vec::with_capacity(steps);
    let mut objective = 0.0;
    for t in 0..steps {
        let a = arcs.start[i] + choices.get(t * n + i);
        let j = arcs.to[a] as usize;
        let dispatch = if j == i {
            Dispatch::idle(spec.len())
        } else {
            dispatch_for_delta(spec, &state, grid.value(j) - soc_total(spec, &state))
                .ok_or_else(|| Error::InfeasibleDispatch(format!("arc {i} -> {j} at step {t} not realizable")))?
        };
        objective += reward(t, dispatch.net(), dispatch.physical_cost(spec));
        state = apply_dispatch(spec, &state, &dispatch)?;
        states.push(state.clone());
        dispatches.push(dispatch);
        i = j;
    }
    Ok(Schedule {
        dispatches,
        states,
        objective,
    })
}

/// Arbitrage-optimal schedule against known prices:
/// maximizes `sum_t lambda_t (d_t - p_t) - sum_s C_s d_{t,s}`.
pub fn multi_period_dispatch(
    spec: &StorageSpec,
    prices: &PriceSeries,
    e_init: f64,
    grid: &SocGrid,
) -> Result<Schedule> {
    let p = prices.prices();
    optimize_on_grid(spec, grid, p.len(), e_init, |t, net, cost| p[t] * net - cost)
}

/// Steps between stored value checkpoints in the refined DP.
pub const CHECKPOINT_STEPS: usize = 288;

/// Position of `e` on the grid as `(i, w)`, value `(1 - w) V[i] + w V[i + 1]`.
fn locate(grid: &SocGrid, e: f64) -> Option<(usize, f64)> {
    let n = grid.points();
    if n == 1 || grid.spacing() == 0.0 {
        return ((e - grid.lo()).abs() <= 1e-9).then_some((0, 0.0));
    }
    let r = (e - grid.lo()) / grid.spacing();
    if r < -1e-9 || r > (n - 1) as f64 + 1e-9 {
        return None;
    }
    let r = r.clamp(0.0, (n - 1) as f64);
    let i = (r.floor() as usize).min(n - 2);
    Some((i, r - i as f64))
}

fn interp(v: &[f64], (i, w): (usize, f64)) -> f64 {
    if w == 0.0 {
        v[i]
    } else {
        (1.0 - w) * v[i] + w * v[i + 1]
    }
}

/// Moves from an arbitrary state: idle, every reachable grid point, and the
/// full-rating charge and discharge.
fn candidate_moves(spec: &StorageSpec, grid: &SocGrid, state: &StorageState) -> Vec<(Dispatch, (usize, f64))> {
    let e = soc_total(spec, state);
    let mut out = Vec::new();
    let mut push = |d: Dispatch| {
        let to = e + d.p_seg.iter().zip(spec.segments()).map(|(p, s)| p * s.eta_p).sum::<f64>()
            - d.d_seg.iter().zip(spec.segments()).map(|(d, s)| d / s.eta_d).sum::<f64>();
        if let Some(at) = locate(grid, to) {
            out.push((d, at));
        }
    };
    push(Dispatch::idle(spec.len()));
    let env = feasible_envelope(spec, state);
    if env.max_discharge > 0.0 {
        if let Ok(d) = discharge_dispatch(spec, state, env.max_discharge) {
            push(d);
        }
    }
    if env.max_charge > 0.0 {
        if let Ok(d) = charge_dispatch(spec, state, env.max_charge) {
            push(d);
        }
    }
    let k = grid.nearest(e);
    for j in (0..=k).rev() {
        let delta = grid.value(j) - e;
        if delta >= -1e-12 {
            continue;
        }
        match dispatch_for_delta(spec, state, delta) {
            Some(d) => push(d),
            None => break,
        }
    }
    for j in k..grid.points() {
        let delta = grid.value(j) - e;
        if delta <= 1e-12 {
            continue;
        }
        match dispatch_for_delta(spec, state, delta) {
            Some(d) => push(d),
            None => break,
        }
    }
    out
}

struct RefinedArcs {
    start: Vec<usize>,
    idx: Vec<u32>,
    w: Vec<f64>,
    net: Vec<f64>,
    cost: Vec<f64>,
}

impl RefinedArcs {
    fn build(spec: &StorageSpec, grid: &SocGrid) -> Result<Self> {
        let mut arcs = RefinedArcs { start: Vec::new(), idx: Vec::new(), w: Vec::new(), net: Vec::new(), cost: Vec::new() };
        for i in 0..grid.points() {
            arcs.start.push(arcs.idx.len());
            let state = StorageState::from_soc(spec, grid.value(i))?;
            for (d, (j, w)) in candidate_moves(spec, grid, &state) {
                arcs.idx.push(j as u32);
                arcs.w.push(w);
                arcs.net.push(d.net());
                arcs.cost.push(d.physical_cost(spec));
            }
        }
        arcs.start.push(arcs.idx.len());
        Ok(arcs)
    }

    /// `V_t` on the grid from `V_{t+1}` at price `lambda`.
    fn backup(&self, lambda: f64, next: &[f64], cur: &mut [f64]) {
        for (i, v) in cur.iter_mut().enumerate() {
            let mut best = f64::NEG_INFINITY;
            for a in self.start[i]..self.start[i + 1] {
                let j = self.idx[a] as usize;
                let w = self.w[a];
                let after = (1.0 - w) * next[j] + w * next[j + 1];
                best = best.max(lambda * self.net[a] - self.cost[a] + after);
            }
            *v = best;
        }
    }
}

/// Arbitrage schedule by a look-ahead DP whose value function is linearly
/// interpolated between grid points and whose moves include the exact
/// full-rating charge and discharge, so rate limits are not rounded to the
/// grid. The trajectory is followed from the true (off-grid) state,
/// re-solving each step against the interpolated value; values are kept
/// every [`CHECKPOINT_STEPS`] steps and recomputed block by block on the
/// way forward. The grid must span the SoC range.
pub fn multi_period_dispatch_refined(
    spec: &StorageSpec,
    prices: &PriceSeries,
    e_init: f64,
    grid: &SocGrid,
) -> Result<Schedule> {
    check_init(spec, e_init)?;
    if grid.lo() > spec.e_min() + 1e-12 || grid.hi() < spec.e_max() - 1e-12 || grid.points() < 2 {
        return Err(Error::Grid("refined DP needs a grid spanning the SoC range".into()));
    }
    let p = prices.prices();
    let steps = p.len();
    let n = grid.points();
    let arcs = RefinedArcs::build(spec, grid)?;

    let blocks = steps.div_ceil(CHECKPOINT_STEPS);
    let mut checkpoints = vec![vec![0.0; n]; blocks + 1];
    let mut next = vec![0.0; n];
    let mut cur = vec![0.0; n];
    for t in (0..steps).rev() {
        if (t + 1) % CHECKPOINT_STEPS == 0 || t + 1 == steps {
            checkpoints[(t + 1).div_ceil(CHECKPOINT_STEPS)].copy_from_slice(&next);
        }
        arcs.backup(p[t], &next, &mut cur);
        std::mem::swap(&mut cur, &mut next);
    }

    let mut state = StorageState::from_soc(spec, e_init)?;
    let mut states = vec![state.clone()];
    let mut dispatches = Vec::with_capacity(steps);
    let mut objective = 0.0;
    let mut block = Vec::new();
    for b in 0..blocks {
        let t0 = b * CHECKPOINT_STEPS;
        let t1 = ((b + 1) * CHECKPOINT_STEPS).min(steps);
        // block[k] holds V_{t0 + k + 1}
        block.clear();
        block.resize((t1 - t0) * n, 0.0);
        block[(t1 - t0 - 1) * n..].copy_from_slice(&checkpoints[b + 1]);
        for t in (t0 + 1..t1).rev() {
            let (lo, hi) = block.split_at_mut((t - t0) * n);
            arcs.backup(p[t], &hi[..n], &mut lo[(t - t0 - 1) * n..]);
        }
        for (t, lambda) in p.iter().enumerate().take(t1).skip(t0) {
            let v_next = &block[(t - t0) * n..(t - t0 + 1) * n];
            let mut best: Option<(f64, Dispatch)> = None;
            for (d, at) in candidate_moves(spec, grid, &state) {
                let v = lambda * d.net() - d.physical_cost(spec) + interp(v_next, at);
                if best.as_ref().is_none_or(|(b, _)| v > *b) {
                    best = Some((v, d));
                }
            }
            let (_, d) = best.ok_or_else(|| Error::InfeasibleDispatch(format!("no feasible move at step {t}")))?;
            objective += lambda * d.net() - d.physical_cost(spec);
            state = apply_dispatch(spec, &state, &d)?;
            states.push(state.clone());
            dispatches.push(d);
        }
    }
    Ok(Schedule { dispatches, states, objective })
}

/// Largest instance the exhaustive oracle accepts.
pub const ORACLE_MAX_STEPS: usize = 4;
pub const ORACLE_MAX_POINTS: usize = 21;
pub const ORACLE_MAX_SEGMENTS: usize = 2;

/// Exhaustive search over every sequence of grid states, each step checked
/// by `apply_dispatch`. For tiny instances only.
pub fn brute_force_oracle(
    spec: &StorageSpec,
    prices: &PriceSeries,
    e_init: f64,
    grid: &SocGrid,
) -> Result<Schedule> {
    if prices.len() > ORACLE_MAX_STEPS || grid.points() > ORACLE_MAX_POINTS || spec.len() > ORACLE_MAX_SEGMENTS {
        return Err(Error::TooLarge(format!(
            "oracle limits are T <= {ORACLE_MAX_STEPS}, {ORACLE_MAX_POINTS} grid points, S <= {ORACLE_MAX_SEGMENTS}; got T = {}, {} points, S = {}",
            prices.len(),
            grid.points(),
            spec.len()
        )));
    }
    check_init(spec, e_init)?;
    let start = StorageState::from_soc(spec, grid.value(grid.nearest(e_init)))?;
    let targets: Vec<StorageState> = grid
        .values()
        .iter()
        .map(|&e| StorageState::from_soc(spec, e))
        .collect::<Result<_>>()?;

    struct Search<'a> {
        spec: &'a StorageSpec,
        prices: &'a [f64],
        targets: &'a [StorageState],
        path: Vec<Dispatch>,
        best: Option<(f64, Vec<Dispatch>)>,
    }

    impl Search<'_> {
        /// Segment-wise move from `from` to `to`, if it is a pure charge or discharge.
        fn move_between(&self, from: &StorageState, to: &StorageState) -> Option<Dispatch> {
            let n = self.spec.len();
            let mut d = Dispatch::idle(n);
            let mut up = false;
            let mut down = false;
            for s in 0..n {
                let delta = to.segments()[s] - from.segments()[s];
                let seg = &self.spec.segments()[s];
                if delta > 0.0 {
                    up = true;
                    d.p_seg[s] = delta / seg.eta_p;
                } else if delta < 0.0 {
                    down = true;
                    d.d_seg[s] = -delta * seg.eta_d;
                }
            }
            if up && down {
                return None;
            }
            d.p = d.p_seg.iter().sum();
            d.d = d.d_seg.iter().sum();
            Some(d)
        }

        fn go(&mut self, t: usize, state: &StorageState, value: f64) {
            if t == self.prices.len() {
                if self.best.as_ref().is_none_or(|b| value > b.0) {
                    self.best = Some((value, self.path.clone()));
                }
                return;
            }
            for target in self.targets {
                let Some(d) = self.move_between(state, target) else {
                    continue;
                };
                let Ok(next) = apply_dispatch(self.spec, state, &d) else {
                    continue;
                };
                let gain = self.prices[t] * d.net() - d.physical_cost(self.spec);
                self.path.push(d);
                self.go(t + 1, &next, value + gain);
                self.path.pop();
            }
        }
    }

    let mut search = Search {
        spec,
        prices: prices.prices(),
        targets: &targets,
        path: Vec::new(),
        best: None,
    };
    search.go(0, &start, 0.0);
    let (objective, dispatches) = search
        .best
        .ok_or_else(|| Error::InfeasibleDispatch("no feasible schedule".into()))?;
    let mut states = vec![start];
    for d in &dispatches {
        let next = apply_dispatch(spec, states.last().unwrap(), d)?;
        states.push(next);
    }
    Ok(Schedule {
        dispatches,
        states,
        objective,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::storage::SegmentSpec;
    use rand::{Rng, SeedableRng};

    fn linear() -> StorageSpec {
        StorageSpec::linear(1.0, 0.25, 0.9, 20.0).unwrap()
    }

    #[test]
    fn two_step_charge_then_sell() {
        let spec = linear();
        let grid = SocGrid::for_spec(&spec, 10001).unwrap();
        let prices = PriceSeries::new(60, vec![10.0, 100.0]).unwrap();
        let s = multi_period_dispatch(&spec, &prices, 0.0, &grid).unwrap();
        // Buy 0.25 at 10, store 0.225, sell 0.2025 at 100 less 20 cost.
        let expect = 0.2025 * (100.0 - 20.0) - 0.25 * 10.0;
        assert!((s.objective - expect).abs() < 1e-9, "{}", s.objective);
        assert!((s.dispatches[0].p - 0.25).abs() < 1e-12);
        assert!((s.dispatches[1].d - 0.2025).abs() < 1e-12);
    }

    #[test]
    fn flat_prices_idle_and_negative_price_charges() {
        let spec = linear();
        let grid = SocGrid::for_spec(&spec, 101).unwrap();
        let flat = PriceSeries::new(60, vec![40.0; 12]).unwrap();
        let s = multi_period_dispatch(&spec, &flat, 0.0, &grid).unwrap();
        assert_eq!(s.objective, 0.0);
        assert!(s.dispatches.iter().all(|d| d.energy_moved() == 0.0));

        let neg = PriceSeries::new(60, vec![-30.0]).unwrap();
        let s = multi_period_dispatch(&spec, &neg, 0.0, &grid).unwrap();
        // Being paid to charge is profitable even with no future: the grid
        // admits 0.22 MWh stored out of the 0.225 the rating allows.
        let p = 0.22 / 0.9;
        assert!((s.dispatches[0].p - p).abs() < 1e-12);
        assert!((s.objective - 30.0 * p).abs() < 1e-9);
    }

    #[test]
    fn rejects_initial_soc_outside_range() {
        let spec = linear();
        let grid = SocGrid::for_spec(&spec, 11).unwrap();
        let prices = PriceSeries::new(60, vec![10.0]).unwrap();
        assert!(matches!(
            multi_period_dispatch(&spec, &prices, 1.5, &grid),
            Err(Error::OutOfRange(_))
        ));
    }

    #[test]
    fn oracle_limits_and_degenerate_grid() {
        let spec = linear();
        let prices = PriceSeries::new(60, vec![10.0; 5]).unwrap();
        let grid = SocGrid::for_spec(&spec, 11).unwrap();
        assert!(matches!(brute_force_oracle(&spec, &prices, 0.0, &grid), Err(Error::TooLarge(_))));

        let grid = SocGrid::uniform(0.4, 0.4, 1).unwrap();
        let prices = PriceSeries::new(60, vec![10.0, 90.0]).unwrap();
        for s in [
            multi_period_dispatch(&spec, &prices, 0.4, &grid).unwrap(),
            brute_force_oracle(&spec, &prices, 0.4, &grid).unwrap(),
        ] {
            assert_eq!(s.objective, 0.0);
            assert!(s.dispatches.iter().all(|d| d.energy_moved() == 0.0));
        }
    }

    #[test]
    fn single_step_is_envelope_maximization() {
        let spec = linear();
        let grid = SocGrid::for_spec(&spec, 21).unwrap();
        let prices = PriceSeries::new(60, vec![80.0]).unwrap();
        let s = brute_force_oracle(&spec, &prices, 1.0, &grid).unwrap();
        // Rating 0.25 out of a full store moves 0.25/0.9 = 0.278 MWh; the grid
        // stops at 0.25 MWh of stored energy.
        assert!((s.dispatches[0].d - 0.25 * 0.9).abs() < 1e-12);
        let dp = multi_period_dispatch(&spec, &prices, 1.0, &grid).unwrap();
        assert!((dp.objective - s.objective).abs() < 1e-9);
    }

    #[test]
    fn dp_matches_oracle_on_random_tiny_instances() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        for _ in 0..30 {
            let s_count = rng.gen_range(1..=2);
            let segs: Vec<SegmentSpec> = (0..s_count)
                .map(|i| SegmentSpec {
                    e_end: (i + 1) as f64 * 0.5,
                    cost: rng.gen_range(0.0..20.0),
                    d_rating: rng.gen_range(0.1..0.5),
                    p_rating: rng.gen_range(0.1..0.5),
                    eta_d: rng.gen_range(0.8..1.0),
                    eta_p: rng.gen_range(0.8..1.0),
                })
                .collect();
            let spec = StorageSpec::new(0.0, segs).unwrap();
            let grid = SocGrid::for_spec(&spec, 21).unwrap();
            let t = rng.gen_range(1..=4);
            let prices = PriceSeries::new(60, (0..t).map(|_| rng.gen_range(-10.0..100.0)).collect()).unwrap();
            let e0 = rng.gen_range(0.0..=spec.e_max());
            let dp = multi_period_dispatch(&spec, &prices, e0, &grid).unwrap();
            let bf = brute_force_oracle(&spec, &prices, e0, &grid).unwrap();
            assert!((dp.objective - bf.objective).abs() < 1e-9, "{} vs {}", dp.objective, bf.objective);
        }
    }

    #[test]
    fn replay_reproduces_states() {
        let spec = StorageSpec::linear(1.0, 0.25, 0.9, 5.0).unwrap().aggregate(4).unwrap();
        let grid = SocGrid::for_spec(&spec, 201).unwrap();
        let prices: Vec<f64> = (0..48).map(|t| 40.0 + 30.0 * ((t as f64) * 0.26).sin()).collect();
        let prices = PriceSeries::new(60, prices).unwrap();
        let s = multi_period_dispatch(&spec, &prices, 0.3, &grid).unwrap();
        let mut state = s.states[0].clone();
        let mut profit = 0.0;
        for (t, d) in s.dispatches.iter().enumerate() {
            state = apply_dispatch(&spec, &state, d).unwrap();
            assert_eq!(state, s.states[t + 1]);
            profit += prices.prices()[t] * d.net() - d.physical_cost(&spec);
        }
        assert!((profit - s.objective).abs() < 1e-9);
        assert!(s.objective > 0.0);
    }

    #[test]
    fn refined_reaches_exact_rating_on_coarse_grid() {
        let spec = linear();
        let grid = SocGrid::for_spec(&spec, 11).unwrap();
        let prices = PriceSeries::new(60, vec![10.0, 100.0]).unwrap();
        let on_grid = multi_period_dispatch(&spec, &prices, 0.0, &grid).unwrap();
        let refined = multi_period_dispatch_refined(&spec, &prices, 0.0, &grid).unwrap();
        assert!((refined.objective - 13.7).abs() < 1e-9, "{}", refined.objective);
        assert!(on_grid.objective < refined.objective - 1.0);
    }

    #[test]
    fn refined_dominates_grid_dp_across_checkpoints() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..6 {
            let segs: Vec<SegmentSpec> = (0..3)
                .map(|i| SegmentSpec {
                    e_end: (i + 1) as f64 / 3.0,
                    cost: rng.gen_range(0.0..20.0),
                    d_rating: rng.gen_range(0.02..0.08),
                    p_rating: rng.gen_range(0.02..0.08),
                    eta_d: rng.gen_range(0.8..1.0),
                    eta_p: rng.gen_range(0.8..1.0),
                })
                .collect();
            let spec = StorageSpec::new(0.0, segs).unwrap();
            let grid = SocGrid::for_spec(&spec, 61).unwrap();
            let t = rng.gen_range(CHECKPOINT_STEPS..2 * CHECKPOINT_STEPS + 50);
            let prices: Vec<f64> = (0..t)
                .map(|k| 40.0 + 25.0 * (k as f64 * 0.05).sin() + rng.gen_range(-15.0..15.0))
                .collect();
            let prices = PriceSeries::new(5, prices).unwrap();
            let e0 = rng.gen_range(0.0..1.0);
            let grid_e0 = grid.value(grid.nearest(e0));
            let on_grid = multi_period_dispatch(&spec, &prices, grid_e0, &grid).unwrap();
            let refined = multi_period_dispatch_refined(&spec, &prices, grid_e0, &grid).unwrap();
            assert!(refined.objective >= on_grid.objective - 1e-9, "{} < {}", refined.objective, on_grid.objective);

            let mut state = refined.states[0].clone();
            let mut profit = 0.0;
            for (k, d) in refined.dispatches.iter().enumerate() {
                state = apply_dispatch(&spec, &state, d).unwrap();
                assert_eq!(state, refined.states[k + 1]);
                profit += prices.prices()[k] * d.net() - d.physical_cost(&spec);
            }
            assert!((profit - refined.objective).abs() < 1e-9);
        }
    }

    #[test]
    fn refined_needs_spanning_grid() {
        let spec = linear();
        let grid = SocGrid::uniform(0.2, 0.8, 7).unwrap();
        let prices = PriceSeries::new(60, vec![10.0]).unwrap();
        assert!(matches!(multi_period_dispatch_refined(&spec, &prices, 0.2, &grid), Err(Error::Grid(_))));
    }
}
