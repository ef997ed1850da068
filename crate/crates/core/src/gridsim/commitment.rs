//! Priority-list unit commitment.
//!
//! Units are committed hour by hour in order of full-load average cost until
//! the hour has its reserve, then minimum up and down times are repaired by
//! extending or removing runs, and finally whole on-runs are dropped in
//! reverse priority order whenever that keeps every constraint and lowers the
//! daily cost. Status before the first hour is taken equal to the first hour,
//! so runs touching either end of the day are not bound by minimum times.

use serde::{Deserialize, Serialize};

use super::thermal::ThermalStack;
use super::{reserve_requirement, Fleet, ScenarioData, ThermalDispatch, BALANCE_TOL};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommitmentSchedule {
    /// `status[i][t]`: unit `i` online in hour `t`.
    pub status: Vec<Vec<bool>>,
    pub startup: Vec<Vec<bool>>,
    pub shutdown: Vec<Vec<bool>>,
    /// Day-ahead price per hour ($/MWh).
    pub prices: Vec<f64>,
    pub dispatch: Vec<ThermalDispatch>,
    /// Production, no-load and startup cost over the day ($).
    pub cost: f64,
}

impl CommitmentSchedule {
    /// Dispatches every hour of a given status matrix.
    pub fn from_status(fleet: &Fleet, scenario: &ScenarioData, status: Vec<Vec<bool>>) -> Result<Self> {
        let hours = scenario.hours();
        if status.len() != fleet.len() || status.iter().any(|r| r.len() != hours) {
            return Err(Error::InvalidInput("status matrix does not match fleet and horizon".into()));
        }
        let mut startup = vec![vec![false; hours]; fleet.len()];
        let mut shutdown = vec![vec![false; hours]; fleet.len()];
        let mut cost = 0.0;
        for (i, row) in status.iter().enumerate() {
            for t in 1..hours {
                startup[i][t] = row[t] && !row[t - 1];
                shutdown[i][t] = !row[t] && row[t - 1];
                if startup[i][t] {
                    cost += fleet.generators()[i].c_start;
                }
            }
        }
        let mut dispatch = Vec::with_capacity(hours);
        for t in 0..hours {
            let d = hour_stack(fleet, &status, t)
                .dispatch(scenario.demand()[t], scenario.wind()[t])
                .map_err(|e| Error::Commitment {
                    hour: t + 1,
                    reason: e.to_string(),
                })?;
            cost += d.cost;
            dispatch.push(d);
        }
        Ok(Self {
            prices: dispatch.iter().map(|d| d.price).collect(),
            status,
            startup,
            shutdown,
            dispatch,
            cost,
        })
    }

    pub fn hours(&self) -> usize {
        self.prices.len()
    }

    pub fn online(&self, t: usize) -> Vec<bool> {
        self.status.iter().map(|r| r[t]).collect()
    }

    pub fn stack(&self, fleet: &Fleet, t: usize) -> ThermalStack {
        hour_stack(fleet, &self.status, t)
    }

    /// No-load and startup costs, which do not depend on the dispatch.
    pub fn fixed_cost(&self, fleet: &Fleet) -> f64 {
        let mut c = 0.0;
        for (i, g) in fleet.generators().iter().enumerate() {
            c += self.status[i].iter().filter(|u| **u).count() as f64 * g.c_noload;
            c += self.startup[i].iter().filter(|y| **y).count() as f64 * g.c_start;
        }
        c
    }
}

fn hour_stack(fleet: &Fleet, status: &[Vec<bool>], t: usize) -> ThermalStack {
    let online: Vec<bool> = status.iter().map(|r| r[t]).collect();
    ThermalStack::new(fleet.generators(), &online)
}

fn min_gen(fleet: &Fleet, status: &[Vec<bool>], t: usize) -> f64 {
    fleet
        .generators()
        .iter()
        .zip(status)
        .filter(|(_, r)| r[t])
        .map(|(g, _)| g.g_min)
        .sum()
}

/// Dispatchable with enough upward reserve.
fn hour_ok(fleet: &Fleet, scenario: &ScenarioData, status: &[Vec<bool>], t: usize) -> bool {
    let stack = hour_stack(fleet, status, t);
    let demand = scenario.demand()[t];
    match stack.dispatch(demand, scenario.wind()[t]) {
        Ok(d) => {
            let headroom = stack.max_output() - (demand - d.wind_used);
            headroom >= reserve_requirement(d.wind_used, demand) - BALANCE_TOL
        }
        Err(_) => false,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Violation {
    /// On-run `[a, b]` shorter than the minimum up time.
    ShortOn { unit: usize, a: usize, b: usize },
    /// Off-run `[a, b]` shorter than the minimum down time.
    ShortOff { unit: usize, a: usize, b: usize },
}

/// Interior runs of `row` as `(on, start, end)`; runs touching hour 0 or the
/// last hour are left out.
fn interior_runs(row: &[bool]) -> Vec<(bool, usize, usize)> {
    let mut runs = Vec::new();
    let mut a = 0;
    for t in 1..=row.len() {
        if t == row.len() || row[t] != row[a] {
            if a > 0 && t < row.len() {
                runs.push((row[a], a, t - 1));
            }
            a = t;
        }
    }
    runs
}

fn first_violation(fleet: &Fleet, status: &[Vec<bool>], order: &[usize]) -> Option<Violation> {
    for &i in order {
        let g = &fleet.generators()[i];
        for (on, a, b) in interior_runs(&status[i]) {
            let len = b - a + 1;
            if on && len < g.t_up as usize {
                return Some(Violation::ShortOn { unit: i, a, b });
            }
            if !on && len < g.t_dn as usize {
                return Some(Violation::ShortOff { unit: i, a, b });
            }
        }
    }
    None
}

struct Builder<'a> {
    fleet: &'a Fleet,
    scenario: &'a ScenarioData,
    order: Vec<usize>,
    status: Vec<Vec<bool>>,
    locked_off: Vec<Vec<bool>>,
}

impl Builder<'_> {
    /// Adds units in priority order until hour `t` is feasible.
    fn commit_hour(&mut self, t: usize) -> Result<()> {
        let demand = self.scenario.demand()[t];
        for k in 0..=self.order.len() {
            if hour_ok(self.fleet, self.scenario, &self.status, t) {
                return Ok(());
            }
            if k == self.order.len() {
                break;
            }
            let i = self.order[k];
            let g = &self.fleet.generators()[i];
            if self.status[i][t] || self.locked_off[i][t] {
                continue;
            }
            if min_gen(self.fleet, &self.status, t) + g.g_min > demand + BALANCE_TOL {
                continue;
            }
            self.status[i][t] = true;
        }
        Err(Error::Commitment {
            hour: t + 1,
            reason: format!(
                "no unit combination covers demand {:.1} MW plus reserve within minimum generation",
                demand
            ),
        })
    }

    fn min_gen_ok(&self, t: usize) -> bool {
        min_gen(self.fleet, &self.status, t) <= self.scenario.demand()[t] + BALANCE_TOL
    }

    fn repair(&mut self) -> Result<()> {
        let hours = self.scenario.hours();
        let limit = 4 * self.fleet.len() * hours + 16;
        for _ in 0..limit {
            let Some(v) = first_violation(self.fleet, &self.status, &self.order) else {
                return Ok(());
            };
            match v {
                Violation::ShortOff { unit, a, b } => {
                    // Bridge the gap if minimum generation allows it.
                    let saved = self.status.clone();
                    for t in a..=b {
                        self.status[unit][t] = true;
                    }
                    if (a..=b).all(|t| self.min_gen_ok(t)) {
                        continue;
                    }
                    self.status = saved;
                    let end = (a + self.fleet.generators()[unit].t_dn as usize - 1).min(hours - 1);
                    for t in a..=end {
                        self.status[unit][t] = false;
                        self.locked_off[unit][t] = true;
                    }
                    for t in a..=end {
                        self.commit_hour(t)?;
                    }
                }
                Violation::ShortOn { unit, a, b } => {
                    let saved = self.status.clone();
                    let end = (a + self.fleet.generators()[unit].t_up as usize - 1).min(hours - 1);
                    for t in b + 1..=end {
                        self.status[unit][t] = true;
                    }
                    if (b + 1..=end).all(|t| self.min_gen_ok(t)) {
                        continue;
                    }
                    self.status = saved;
                    for t in a..=b {
                        self.status[unit][t] = false;
                        self.locked_off[unit][t] = true;
                    }
                    for t in a..=b {
                        self.commit_hour(t)?;
                    }
                }
            }
        }
        let hour = match first_violation(self.fleet, &self.status, &self.order) {
            Some(Violation::ShortOn { a, .. }) | Some(Violation::ShortOff { a, .. }) => a + 1,
            None => return Ok(()),
        };
        Err(Error::Commitment {
            hour,
            reason: "minimum up/down repair did not converge".into(),
        })
    }

    fn feasible(&self, status: &[Vec<bool>]) -> bool {
        first_violation(self.fleet, status, &self.order).is_none()
            && (0..self.scenario.hours()).all(|t| hour_ok(self.fleet, self.scenario, status, t))
    }

    fn decommit(&mut self) -> Result<()> {
        let mut best = CommitmentSchedule::from_status(self.fleet, self.scenario, self.status.clone())?.cost;
        for k in (0..self.order.len()).rev() {
            let i = self.order[k];
            let mut t = 0;
            while t < self.scenario.hours() {
                if !self.status[i][t] {
                    t += 1;
                    continue;
                }
                let a = t;
                while t < self.scenario.hours() && self.status[i][t] {
                    t += 1;
                }
                let mut trial = self.status.clone();
                for h in a..t {
                    trial[i][h] = false;
                }
                if !self.feasible(&trial) {
                    continue;
                }
                let cost = CommitmentSchedule::from_status(self.fleet, self.scenario, trial.clone())?.cost;
                if cost < best - 1e-9 {
                    best = cost;
                    self.status = trial;
                }
            }
        }
        Ok(())
    }
}

/// Heuristic day-ahead commitment without storage.
pub fn unit_commitment(fleet: &Fleet, scenario: &ScenarioData) -> Result<CommitmentSchedule> {
    let n = fleet.len();
    let hours = scenario.hours();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        let ca = fleet.generators()[a].full_load_average_cost();
        let cb = fleet.generators()[b].full_load_average_cost();
        ca.total_cmp(&cb).then(a.cmp(&b))
    });
    let mut b = Builder {
        fleet,
        scenario,
        order,
        status: vec![vec![false; hours]; n],
        locked_off: vec![vec![false; hours]; n],
    };
    for t in 0..hours {
        b.commit_hour(t)?;
    }
    b.repair()?;
    b.decommit()?;
    let schedule = CommitmentSchedule::from_status(fleet, scenario, b.status)?;
    check_commitment(fleet, scenario, &schedule)?;
    Ok(schedule)
}

/// Verifies logic, minimum up/down, limit, balance and reserve constraints of
/// a schedule, reporting the first violated hour.
pub fn check_commitment(fleet: &Fleet, scenario: &ScenarioData, s: &CommitmentSchedule) -> Result<()> {
    let hours = scenario.hours();
    let fail = |t: usize, reason: String| Err(Error::Commitment { hour: t + 1, reason });
    if s.status.len() != fleet.len() || s.dispatch.len() != hours || s.prices.len() != hours {
        return fail(0, "schedule dimensions do not match fleet and horizon".into());
    }
    for (i, g) in fleet.generators().iter().enumerate() {
        let u = |t: usize| s.status[i][if t == 0 { 0 } else { t - 1 }] as i32;
        let at = |t: usize| s.status[i][t] as i32;
        for t in 0..hours {
            let (y, z) = (s.startup[i][t] as i32, s.shutdown[i][t] as i32);
            // u_{t-1} for t = 0 is the first hour's status.
            let prev = if t == 0 { at(0) } else { u(t) };
            if y - z != at(t) - prev || y + z > 1 {
                return fail(t, format!("unit {}: startup/shutdown logic", g.id));
            }
            let from_up = (t + 1).saturating_sub(g.t_up as usize);
            let ups: i32 = (from_up..=t).map(|k| s.startup[i][k] as i32).sum();
            if ups > at(t) {
                return fail(t, format!("unit {}: minimum up time", g.id));
            }
            let from_dn = (t + 1).saturating_sub(g.t_dn as usize);
            let downs: i32 = (from_dn..=t).map(|k| s.shutdown[i][k] as i32).sum();
            if downs > 1 - at(t) {
                return fail(t, format!("unit {}: minimum down time", g.id));
            }
        }
    }
    for t in 0..hours {
        let d = &s.dispatch[t];
        let demand = scenario.demand()[t];
        let mut total = d.wind_used;
        let mut headroom = 0.0;
        for (i, g) in fleet.generators().iter().enumerate() {
            let on = s.status[i][t];
            let x = d.output[i];
            let (lo, hi) = if on { (g.g_min, g.g_max) } else { (0.0, 0.0) };
            if x < lo - BALANCE_TOL || x > hi + BALANCE_TOL {
                return fail(t, format!("unit {} output {x:.6} outside [{lo}, {hi}]", g.id));
            }
            total += x;
            headroom += hi - x;
        }
        if d.wind_used > scenario.wind()[t] + BALANCE_TOL || d.wind_used < -BALANCE_TOL {
            return fail(t, "wind above forecast".into());
        }
        if (total - demand).abs() > BALANCE_TOL {
            return fail(t, format!("power balance off by {:.3e} MW", total - demand));
        }
        let need = reserve_requirement(d.wind_used, demand);
        if headroom < need - BALANCE_TOL {
            return fail(t, format!("reserve {headroom:.3} MW below requirement {need:.3} MW"));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridsim::GeneratorSpec;

    fn gen(id: &str, c_lin: f64, g_min: f64, g_max: f64, t_up: u32, t_dn: u32) -> GeneratorSpec {
        GeneratorSpec {
            id: id.into(),
            c_lin,
            c_quad: 0.001,
            c_noload: 50.0,
            c_start: 200.0,
            g_min,
            g_max,
            t_up,
            t_dn,
        }
    }

    /// Cheapest schedule over every status bitmap that passes the checker.
    fn exhaustive(fleet: &Fleet, scenario: &ScenarioData) -> Option<CommitmentSchedule> {
        let n = fleet.len();
        let hours = scenario.hours();
        let mut best: Option<CommitmentSchedule> = None;
        for code in 0u64..(1 << (n * hours)) {
            let status: Vec<Vec<bool>> = (0..n)
                .map(|i| (0..hours).map(|t| code >> (i * hours + t) & 1 == 1).collect())
                .collect();
            let Ok(s) = CommitmentSchedule::from_status(fleet, scenario, status) else {
                continue;
            };
            if check_commitment(fleet, scenario, &s).is_ok() && best.as_ref().is_none_or(|b| s.cost < b.cost) {
                best = Some(s);
            }
        }
        best
    }

    #[test]
    fn reserve_of_the_five_plus_three_rule() {
        // 5% of 1000 MW wind plus 3% of 10000 MW demand.
        assert!((reserve_requirement(1000.0, 10000.0) - 350.0).abs() < 1e-9);
    }

    #[test]
    fn cheap_unit_stays_on_all_day() {
        let fleet = Fleet::new(vec![gen("a", 10.0, 0.0, 500.0, 1, 1), gen("b", 50.0, 0.0, 500.0, 1, 1)]).unwrap();
        let demand: Vec<f64> = (0..24).map(|t| 200.0 + 10.0 * t as f64).collect();
        let scenario = ScenarioData::new("s", demand, vec![0.0; 24]).unwrap();
        let s = unit_commitment(&fleet, &scenario).unwrap();
        assert!(s.status[0].iter().all(|u| *u));
        assert!(s.status[1].iter().all(|u| !*u));
    }

    #[test]
    fn minimum_down_time_toy_matches_exhaustive_search() {
        // Unit b must leave at hour 5 (minimum generation) and is needed
        // again at hour 8; with t_dn = 3 it stays off through hour 7.
        let fleet = Fleet::new(vec![gen("a", 10.0, 20.0, 100.0, 1, 1), gen("b", 30.0, 60.0, 100.0, 2, 3)]).unwrap();
        let demand = vec![150.0, 150.0, 150.0, 150.0, 70.0, 70.0, 90.0, 150.0];
        let scenario = ScenarioData::new("toy", demand, vec![0.0; 8]).unwrap();
        let heuristic = unit_commitment(&fleet, &scenario).unwrap();
        let best = exhaustive(&fleet, &scenario).unwrap();
        assert_eq!(heuristic.status[1], vec![true, true, true, true, false, false, false, true]);
        assert_eq!(heuristic.status, best.status);
        assert!((heuristic.cost - best.cost).abs() < 1e-6);
    }

    #[test]
    fn heuristic_never_beats_exhaustive_on_toys() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..12 {
            let fleet = Fleet::new(vec![
                gen("a", rng.gen_range(10.0..20.0), 20.0, 100.0, rng.gen_range(1..4), rng.gen_range(1..4)),
                gen("b", rng.gen_range(20.0..40.0), 30.0, 100.0, rng.gen_range(1..4), rng.gen_range(1..4)),
            ])
            .unwrap();
            let demand: Vec<f64> = (0..8).map(|_| rng.gen_range(40.0..180.0)).collect();
            let scenario = ScenarioData::new("toy", demand, vec![0.0; 8]).unwrap();
            let best = exhaustive(&fleet, &scenario);
            match unit_commitment(&fleet, &scenario) {
                Ok(h) => {
                    check_commitment(&fleet, &scenario, &h).unwrap();
                    assert!(h.cost >= best.unwrap().cost - 1e-6);
                }
                Err(_) => {}
            }
        }
    }

    #[test]
    fn checker_flags_short_off_run() {
        let fleet = Fleet::new(vec![gen("a", 10.0, 0.0, 300.0, 1, 1), gen("b", 30.0, 0.0, 300.0, 1, 3)]).unwrap();
        let scenario = ScenarioData::new("s", vec![100.0; 6], vec![0.0; 6]).unwrap();
        let status = vec![vec![true; 6], vec![true, true, false, true, true, true]];
        let s = CommitmentSchedule::from_status(&fleet, &scenario, status).unwrap();
        let err = check_commitment(&fleet, &scenario, &s).unwrap_err();
        assert!(err.to_string().contains("minimum down time"), "{err}");
    }
}
