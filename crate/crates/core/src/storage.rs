//! SoC-segment storage physics.
//!
//! A storage device is a stack of SoC segments `(E_{s-1}, E_s]`, each with its
//! own ratings, efficiencies and marginal discharge cost. Energy in the stack
//! obeys the fill-order logic: a segment may hold energy only when every
//! segment below it is full. Discharge therefore always drains from the top
//! down and charge fills from the bottom up.
//!
//! Ratings are expressed in MWh per dispatch step. Within one step a dispatch
//! may cross segment boundaries; the segments share the step through the
//! mixture constraint `sum_s d_s / D_s <= 1` (and the same for charge).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fill-order and bound tolerance on per-segment energy (MWh).
pub const FILL_TOL: f64 = 1e-9;

/// Relative slack on the mixture rating constraint.
const RATING_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentSpec {
    /// Upper SoC breakpoint `E_s` (MWh).
    pub e_end: f64,
    /// Marginal discharge cost `C_s` ($/MWh).
    pub cost: f64,
    /// Discharge rating `D_s` (MWh per dispatch step).
    pub d_rating: f64,
    /// Charge rating `P_s` (MWh per dispatch step).
    pub p_rating: f64,
    pub eta_d: f64,
    pub eta_p: f64,
}

/// How ratings apply when one step crosses a segment boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrossingRule {
    /// Segments share the step: `sum_s d_s / D_s <= 1`.
    #[default]
    Mixture,
    /// The rating of the segment active at the start of the step caps the
    /// whole step: `sum_s d_s <= D_start`.
    StartSegmentClamp,
}

/// A validated SoC-segment storage description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StorageSpec {
    e_min: f64,
    segments: Vec<SegmentSpec>,
    #[serde(default)]
    crossing: CrossingRule,
}

/// Checks every segment and breakpoint invariant and returns the spec.
pub fn validate_spec(e_min: f64, segments: Vec<SegmentSpec>) -> Result<StorageSpec> {
    StorageSpec::new(e_min, segments)
}

impl StorageSpec {
    pub fn new(e_min: f64, segments: Vec<SegmentSpec>) -> Result<Self> {
        let bad = |segment: usize, reason: String| Err(Error::InvalidSpec { segment, reason });
        if !e_min.is_finite() {
            return bad(0, format!("lower SoC limit {e_min} is not finite"));
        }
        if segments.is_empty() {
            return bad(0, "at least one segment is required".into());
        }
        let mut prev = e_min;
        for (i, seg) in segments.iter().enumerate() {
            let s = i + 1;
            let fields = [
                seg.e_end,
                seg.cost,
                seg.d_rating,
                seg.p_rating,
                seg.eta_d,
                seg.eta_p,
            ];
            if fields.iter().any(|v| !v.is_finite()) {
                return bad(s, "non-finite parameter".into());
            }
            if seg.e_end <= prev {
                return bad(
                    s,
                    format!(
                        "breakpoints must be strictly increasing ({} <= {})",
                        seg.e_end, prev
                    ),
                );
            }
            if !(seg.eta_d > 0.0 && seg.eta_d <= 1.0) {
                return bad(s, format!("discharge efficiency {} outside (0, 1]", seg.eta_d));
            }
            if !(seg.eta_p > 0.0 && seg.eta_p <= 1.0) {
                return bad(s, format!("charge efficiency {} outside (0, 1]", seg.eta_p));
            }
            if seg.d_rating <= 0.0 {
                return bad(s, format!("discharge rating {} must be positive", seg.d_rating));
            }
            if seg.p_rating <= 0.0 {
                return bad(s, format!("charge rating {} must be positive", seg.p_rating));
            }
            if seg.cost < 0.0 {
                return bad(s, format!("discharge cost {} must be non-negative", seg.cost));
            }
            prev = seg.e_end;
        }
        Ok(Self {
            e_min,
            segments,
            crossing: CrossingRule::Mixture,
        })
    }

    /// Single-segment storage on `[0, capacity]` with symmetric rating and efficiency.
    pub fn linear(capacity: f64, rating: f64, eta: f64, cost: f64) -> Result<Self> {
        Self::new(
            0.0,
            vec![SegmentSpec {
                e_end: capacity,
                cost,
                d_rating: rating,
                p_rating: rating,
                eta_d: eta,
                eta_p: eta,
            }],
        )
    }

    pub fn with_crossing(mut self, crossing: CrossingRule) -> Self {
        self.crossing = crossing;
        self
    }

    pub fn crossing(&self) -> CrossingRule {
        self.crossing
    }

    pub fn e_min(&self) -> f64 {
        self.e_min
    }

    pub fn e_max(&self) -> f64 {
        self.segments[self.segments.len() - 1].e_end
    }

    pub fn capacity(&self) -> f64 {
        self.e_max() - self.e_min
    }

    pub fn segments(&self) -> &[SegmentSpec] {
        &self.segments
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    /// Lower breakpoint `E_{s-1}` of segment `s` (0-based).
    pub fn lower(&self, s: usize) -> f64 {
        if s == 0 {
            self.e_min
        } else {
            self.segments[s - 1].e_end
        }
    }

    pub fn width(&self, s: usize) -> f64 {
        self.segments[s].e_end - self.lower(s)
    }

    /// Segment owning SoC `e`: the first `s` with `e <= E_s`. Values at or
    /// below `E_0` map to the first segment, values above `E_S` to the last.
    pub fn segment_at(&self, e: f64) -> usize {
        self.segments
            .iter()
            .position(|seg| e <= seg.e_end + 1e-12)
            .unwrap_or(self.segments.len() - 1)
    }

    /// Multiplies every power rating by `factor`, e.g. when the dispatch step changes.
    pub fn scale_ratings(&self, factor: f64) -> Self {
        let mut out = self.clone();
        for seg in &mut out.segments {
            seg.d_rating *= factor;
            seg.p_rating *= factor;
        }
        out
    }

    /// Multiplies every discharge cost by `factor`.
    pub fn scale_costs(&self, factor: f64) -> Self {
        let mut out = self.clone();
        for seg in &mut out.segments {
            seg.cost *= factor;
        }
        out
    }

    /// Re-partitions the SoC range into `k` equal-width segments whose
    /// parameters are the width-weighted averages of the overlapped segments.
    pub fn aggregate(&self, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidInput("segment count must be at least 1".into()));
        }
        let width = self.capacity() / k as f64;
        let mut out = Vec::with_capacity(k);
        for j in 0..k {
            let lo = self.e_min + width * j as f64;
            let hi = if j + 1 == k {
                self.e_max()
            } else {
                self.e_min + width * (j + 1) as f64
            };
            let mut acc = [0.0f64; 5];
            let mut total = 0.0;
            for (s, seg) in self.segments.iter().enumerate() {
                let overlap = (seg.e_end.min(hi) - self.lower(s).max(lo)).max(0.0);
                if overlap <= 0.0 {
                    continue;
                }
                total += overlap;
                for (a, v) in acc.iter_mut().zip([
                    seg.cost,
                    seg.d_rating,
                    seg.p_rating,
                    seg.eta_d,
                    seg.eta_p,
                ]) {
                    *a += overlap * v;
                }
            }
            out.push(SegmentSpec {
                e_end: hi,
                cost: acc[0] / total,
                d_rating: acc[1] / total,
                p_rating: acc[2] / total,
                eta_d: (acc[3] / total).min(1.0),
                eta_p: (acc[4] / total).min(1.0),
            });
        }
        Ok(Self::new(self.e_min, out)?.with_crossing(self.crossing))
    }
}

/// Energy held in each SoC segment (MWh above the segment's lower breakpoint).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StorageState {
    e_seg: Vec<f64>,
}

impl StorageState {
    pub fn empty(spec: &StorageSpec) -> Self {
        Self {
            e_seg: vec![0.0; spec.len()],
        }
    }

    pub fn full(spec: &StorageSpec) -> Self {
        Self {
            e_seg: (0..spec.len()).map(|s| spec.width(s)).collect(),
        }
    }

    /// The unique fill-order state holding total SoC `soc`.
    pub fn from_soc(spec: &StorageSpec, soc: f64) -> Result<Self> {
        if !soc.is_finite() || soc < spec.e_min() - FILL_TOL || soc > spec.e_max() + FILL_TOL {
            return Err(Error::OutOfRange(format!(
                "SoC {soc} outside [{}, {}]",
                spec.e_min(),
                spec.e_max()
            )));
        }
        let mut remaining = (soc - spec.e_min()).max(0.0);
        let mut e_seg = Vec::with_capacity(spec.len());
        for s in 0..spec.len() {
            let w = spec.width(s);
            let e = remaining.min(w);
            remaining -= e;
            e_seg.push(e);
        }
        let mut state = Self { e_seg };
        state.snap(spec);
        Ok(state)
    }

    pub fn from_segments(spec: &StorageSpec, e_seg: Vec<f64>) -> Result<Self> {
        let state = Self { e_seg };
        check_state(spec, &state)?;
        Ok(state)
    }

    pub fn segments(&self) -> &[f64] {
        &self.e_seg
    }

    /// Total SoC `E_0 + sum_s e_s`.
    pub fn soc(&self, spec: &StorageSpec) -> f64 {
        spec.e_min() + self.e_seg.iter().sum::<f64>()
    }

    fn top_nonempty(&self) -> Option<usize> {
        (0..self.e_seg.len()).rev().find(|&s| self.e_seg[s] > FILL_TOL)
    }

    fn lowest_nonfull(&self, spec: &StorageSpec) -> Option<usize> {
        (0..self.e_seg.len()).find(|&s| self.e_seg[s] < spec.width(s) - FILL_TOL)
    }

    fn snap(&mut self, spec: &StorageSpec) {
        for (s, e) in self.e_seg.iter_mut().enumerate() {
            let w = spec.width(s);
            if *e <= FILL_TOL {
                *e = 0.0;
            } else if *e >= w - FILL_TOL {
                *e = w;
            }
        }
    }
}

/// `E_0 + sum_s e_s`.
pub fn soc_total(spec: &StorageSpec, state: &StorageState) -> f64 {
    state.soc(spec)
}

/// Checks segment bounds and the fill-order logic within [`FILL_TOL`].
pub fn check_state(spec: &StorageSpec, state: &StorageState) -> Result<()> {
    if state.e_seg.len() != spec.len() {
        return Err(Error::InvalidState(format!(
            "{} segment energies for a {}-segment spec",
            state.e_seg.len(),
            spec.len()
        )));
    }
    for (s, &e) in state.e_seg.iter().enumerate() {
        let w = spec.width(s);
        if !e.is_finite() || e < -FILL_TOL || e > w + FILL_TOL {
            return Err(Error::InvalidState(format!(
                "segment {} holds {e} MWh outside [0, {w}]",
                s + 1
            )));
        }
        if s > 0 && e > FILL_TOL && state.e_seg[s - 1] < spec.width(s - 1) - FILL_TOL {
            return Err(Error::InvalidState(format!(
                "segment {} holds energy while segment {} is not full",
                s + 1,
                s
            )));
        }
    }
    Ok(())
}

/// One step of storage operation, in MWh.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dispatch {
    pub p: f64,
    pub d: f64,
    pub p_seg: Vec<f64>,
    pub d_seg: Vec<f64>,
}

impl Dispatch {
    pub fn idle(segments: usize) -> Self {
        Self {
            p: 0.0,
            d: 0.0,
            p_seg: vec![0.0; segments],
            d_seg: vec![0.0; segments],
        }
    }

    fn charge(p_seg: Vec<f64>) -> Self {
        let n = p_seg.len();
        Self {
            p: p_seg.iter().sum(),
            d: 0.0,
            p_seg,
            d_seg: vec![0.0; n],
        }
    }

    fn discharge(d_seg: Vec<f64>) -> Self {
        let n = d_seg.len();
        Self {
            p: 0.0,
            d: d_seg.iter().sum(),
            p_seg: vec![0.0; n],
            d_seg,
        }
    }

    /// Net injection to the grid, `d - p`.
    pub fn net(&self) -> f64 {
        self.d - self.p
    }

    pub fn energy_moved(&self) -> f64 {
        self.p + self.d
    }

    /// Physical discharge cost `sum_s C_s d_s`.
    pub fn physical_cost(&self, spec: &StorageSpec) -> f64 {
        self.d_seg
            .iter()
            .zip(spec.segments())
            .map(|(d, seg)| d * seg.cost)
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub max_charge: f64,
    pub max_discharge: f64,
}

/// Rating each segment is charged against within the step.
fn rating_basis(spec: &StorageSpec, start: usize, s: usize, discharge: bool) -> f64 {
    let pick = |i: usize| {
        let seg = &spec.segments[i];
        if discharge {
            seg.d_rating
        } else {
            seg.p_rating
        }
    };
    match spec.crossing {
        CrossingRule::Mixture => pick(s),
        CrossingRule::StartSegmentClamp => pick(start),
    }
}

/// Drains segments top-down up to `limit` MWh delivered, visiting segments
/// while `willing(s)` holds. Returns per-segment discharge.
pub(crate) fn drain_top_down(
    spec: &StorageSpec,
    state: &StorageState,
    limit: f64,
    willing: impl Fn(usize) -> bool,
) -> Vec<f64> {
    let mut d_seg = vec![0.0; spec.len()];
    let Some(start) = state.top_nonempty() else {
        return d_seg;
    };
    let mut budget = 1.0;
    let mut remaining = limit;
    for s in (0..=start).rev() {
        if !willing(s) || remaining <= 0.0 || budget <= 0.0 {
            break;
        }
        let seg = &spec.segments[s];
        let basis = rating_basis(spec, start, s, true);
        let avail = state.e_seg[s] * seg.eta_d;
        let take = avail.min(budget * basis).min(remaining).max(0.0);
        d_seg[s] = take;
        budget -= take / basis;
        remaining -= take;
        if (avail - take) / seg.eta_d > FILL_TOL {
            break;
        }
    }
    d_seg
}

/// Fills segments bottom-up up to `limit` MWh drawn from the grid.
pub(crate) fn fill_bottom_up(
    spec: &StorageSpec,
    state: &StorageState,
    limit: f64,
    willing: impl Fn(usize) -> bool,
) -> Vec<f64> {
    let mut p_seg = vec![0.0; spec.len()];
    let Some(start) = state.lowest_nonfull(spec) else {
        return p_seg;
    };
    let mut budget = 1.0;
    let mut remaining = limit;
    for s in start..spec.len() {
        if !willing(s) || remaining <= 0.0 || budget <= 0.0 {
            break;
        }
        let seg = &spec.segments[s];
        let basis = rating_basis(spec, start, s, false);
        let room = (spec.width(s) - state.e_seg[s]).max(0.0) / seg.eta_p;
        let take = room.min(budget * basis).min(remaining).max(0.0);
        p_seg[s] = take;
        budget -= take / basis;
        remaining -= take;
        if (room - take) * seg.eta_p > FILL_TOL {
            break;
        }
    }
    p_seg
}

/// Largest single-step charge and discharge the state admits.
pub fn feasible_envelope(spec: &StorageSpec, state: &StorageState) -> Envelope {
    let max_discharge = drain_top_down(spec, state, f64::INFINITY, |_| true).iter().sum();
    let max_charge = fill_bottom_up(spec, state, f64::INFINITY, |_| true).iter().sum();
    Envelope {
        max_charge,
        max_discharge,
    }
}

/// Splits a discharge of `d` MWh over segments in fill order.
pub fn discharge_dispatch(spec: &StorageSpec, state: &StorageState, d: f64) -> Result<Dispatch> {
    let d_seg = drain_top_down(spec, state, d, |_| true);
    let got: f64 = d_seg.iter().sum();
    if got < d - 1e-9 * d.max(1.0) {
        return Err(Error::InfeasibleDispatch(format!(
            "discharge {d} exceeds envelope {got}"
        )));
    }
    Ok(Dispatch::discharge(d_seg))
}

/// Splits a charge of `p` MWh over segments in fill order.
pub fn charge_dispatch(spec: &StorageSpec, state: &StorageState, p: f64) -> Result<Dispatch> {
    let p_seg = fill_bottom_up(spec, state, p, |_| true);
    let got: f64 = p_seg.iter().sum();
    if got < p - 1e-9 * p.max(1.0) {
        return Err(Error::InfeasibleDispatch(format!(
            "charge {p} exceeds envelope {got}"
        )));
    }
    Ok(Dispatch::charge(p_seg))
}

/// The fill-order dispatch that changes stored energy by exactly `delta`
/// MWh, or `None` when the ratings cannot deliver it in one step.
pub fn dispatch_for_delta(spec: &StorageSpec, state: &StorageState, delta: f64) -> Option<Dispatch> {
    let n = spec.len();
    if delta.abs() <= 1e-15 {
        return Some(Dispatch::idle(n));
    }
    if delta < 0.0 {
        let start = state.top_nonempty()?;
        let mut need = -delta;
        let mut d_seg = vec![0.0; n];
        let mut usage = 0.0;
        for s in (0..=start).rev() {
            if need <= 0.0 {
                break;
            }
            let x = state.e_seg[s].min(need);
            need -= x;
            d_seg[s] = x * spec.segments[s].eta_d;
            usage += d_seg[s] / rating_basis(spec, start, s, true);
        }
        if need > FILL_TOL || usage > 1.0 + RATING_TOL {
            return None;
        }
        Some(Dispatch::discharge(d_seg))
    } else {
        let start = state.lowest_nonfull(spec)?;
        let mut need = delta;
        let mut p_seg = vec![0.0; n];
        let mut usage = 0.0;
        for s in start..n {
            if need <= 0.0 {
                break;
            }
            let x = (spec.width(s) - state.e_seg[s]).max(0.0).min(need);
            need -= x;
            p_seg[s] = x / spec.segments[s].eta_p;
            usage += p_seg[s] / rating_basis(spec, start, s, false);
        }
        if need > FILL_TOL || usage > 1.0 + RATING_TOL {
            return None;
        }
        Some(Dispatch::charge(p_seg))
    }
}

/// Advances the state by one step of `dispatch`, rejecting anything outside
/// the single-step feasible set.
pub fn apply_dispatch(
    spec: &StorageSpec,
    state: &StorageState,
    dispatch: &Dispatch,
) -> Result<StorageState> {
    let n = spec.len();
    let infeasible = |msg: String| Err(Error::InfeasibleDispatch(msg));
    if dispatch.p_seg.len() != n || dispatch.d_seg.len() != n || state.e_seg.len() != n {
        return infeasible(format!("dispatch/state sized for a different spec (S = {n})"));
    }
    let all = dispatch.p_seg.iter().chain(&dispatch.d_seg);
    if all.clone().any(|v| !v.is_finite() || *v < -FILL_TOL) {
        return infeasible("negative or non-finite segment quantity".into());
    }
    let p_sum: f64 = dispatch.p_seg.iter().sum();
    let d_sum: f64 = dispatch.d_seg.iter().sum();
    if (p_sum - dispatch.p).abs() > 1e-9 * (1.0 + p_sum.abs())
        || (d_sum - dispatch.d).abs() > 1e-9 * (1.0 + d_sum.abs())
    {
        return infeasible("segment quantities do not sum to the totals".into());
    }
    if p_sum > FILL_TOL && d_sum > FILL_TOL {
        return infeasible(format!("simultaneous charge {p_sum} and discharge {d_sum}"));
    }

    let d_start = state.top_nonempty().unwrap_or(0);
    let p_start = state.lowest_nonfull(spec).unwrap_or(n - 1);
    let d_use: f64 = (0..n)
        .map(|s| dispatch.d_seg[s] / rating_basis(spec, d_start, s, true))
        .sum();
    let p_use: f64 = (0..n)
        .map(|s| dispatch.p_seg[s] / rating_basis(spec, p_start, s, false))
        .sum();
    if d_use > 1.0 + RATING_TOL || p_use > 1.0 + RATING_TOL {
        return infeasible(format!(
            "rating exceeded (discharge usage {d_use:.9}, charge usage {p_use:.9})"
        ));
    }

    let mut e_seg = Vec::with_capacity(n);
    for (s, seg) in spec.segments.iter().enumerate() {
        let e = state.e_seg[s] - dispatch.d_seg[s] / seg.eta_d + dispatch.p_seg[s] * seg.eta_p;
        e_seg.push(e);
    }
    let mut next = StorageState { e_seg };
    check_state(spec, &next).map_err(|e| Error::InfeasibleDispatch(e.to_string()))?;
    next.snap(spec);
    Ok(next)
}

/// Nearest feasible dispatch to the instruction `(p_hat, d_hat)` in the
/// least-squares sense. Ties prefer the smaller total energy moved.
pub fn project_dispatch(
    spec: &StorageSpec,
    state: &StorageState,
    p_hat: f64,
    d_hat: f64,
) -> Dispatch {
    let p_hat = p_hat.max(0.0);
    let d_hat = d_hat.max(0.0);
    let env = feasible_envelope(spec, state);
    let p = p_hat.min(env.max_charge);
    let d = d_hat.min(env.max_discharge);
    let err_charge = (p - p_hat).powi(2) + d_hat.powi(2);
    let err_discharge = p_hat.powi(2) + (d - d_hat).powi(2);

    let charge_wins = err_charge < err_discharge || (err_charge == err_discharge && p < d);
    if charge_wins && p > 0.0 {
        Dispatch::charge(fill_bottom_up(spec, state, p, |_| true))
    } else if !charge_wins && d > 0.0 {
        Dispatch::discharge(drain_top_down(spec, state, d, |_| true))
    } else {
        Dispatch::idle(spec.len())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seg(e_end: f64, d: f64, p: f64, eta: f64, cost: f64) -> SegmentSpec {
        SegmentSpec {
            e_end,
            cost,
            d_rating: d,
            p_rating: p,
            eta_d: eta,
            eta_p: eta,
        }
    }

    fn five_equal(d: [f64; 5]) -> StorageSpec {
        StorageSpec::new(
            0.0,
            (0..5)
                .map(|i| seg(0.2 * (i + 1) as f64, d[i], 0.25, 0.9, 20.0))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn validate_accepts_linear_and_rejects_bad_breakpoints() {
        assert!(StorageSpec::linear(1.0, 0.25, 0.9, 20.0).is_ok());
        let err = StorageSpec::new(
            0.0,
            vec![seg(0.5, 0.25, 0.25, 0.9, 20.0), seg(0.5, 0.25, 0.25, 0.9, 20.0)],
        )
        .unwrap_err();
        assert!(matches!(err, Error::InvalidSpec { segment: 2, .. }), "{err}");
    }

    #[test]
    fn validate_rejects_efficiency_above_one() {
        let mut s = seg(1.0, 0.25, 0.25, 0.9, 20.0);
        s.eta_d = 1.2;
        let err = StorageSpec::new(0.0, vec![s]).unwrap_err();
        assert!(matches!(err, Error::InvalidSpec { segment: 1, .. }));
        assert!(StorageSpec::new(0.0, vec![]).is_err());
        assert!(StorageSpec::linear(1.0, 0.0, 0.9, 20.0).is_err());
        assert!(StorageSpec::linear(1.0, 0.25, 0.9, -1.0).is_err());
    }

    #[test]
    fn soc_total_sums_segments() {
        let spec = five_equal([0.25; 5]);
        assert_eq!(StorageState::full(&spec).soc(&spec), 1.0);
        assert_eq!(StorageState::empty(&spec).soc(&spec), 0.0);
        let st = StorageState::from_soc(&spec, 0.4).unwrap();
        assert!((soc_total(&spec, &st) - 0.4).abs() < 1e-12);
        assert_eq!(st.segments()[2], 0.0);
    }

    #[test]
    fn envelope_rating_or_energy_binds() {
        let spec = StorageSpec::linear(1.0, 0.25, 0.9, 20.0).unwrap();
        let env = feasible_envelope(&spec, &StorageState::full(&spec));
        assert!((env.max_discharge - 0.25).abs() < 1e-12);
        assert_eq!(env.max_charge, 0.0);

        let st = StorageState::from_soc(&spec, 0.1).unwrap();
        let env = feasible_envelope(&spec, &st);
        // Fine-grid oracle: largest d with d <= 0.25 and 0.1 - d/0.9 >= 0.
        let oracle = (0..=250_000)
            .map(|i| i as f64 * 1e-6)
            .filter(|d| 0.1 - d / 0.9 >= -1e-12)
            .fold(0.0, f64::max);
        assert!((env.max_discharge - 0.09).abs() < 1e-12);
        assert!((env.max_discharge - oracle).abs() < 2e-6);
    }

    #[test]
    fn envelope_two_segments_matches_split_search() {
        let spec = StorageSpec::new(
            0.0,
            vec![seg(0.5, 0.25, 0.25, 0.9, 20.0), seg(1.0, 0.125, 0.25, 0.9, 20.0)],
        )
        .unwrap();
        let st = StorageState::full(&spec);
        let env = feasible_envelope(&spec, &st);
        // Enumerate (d1, d2) splits against the raw constraints.
        let mut best: f64 = 0.0;
        let step = 0.0005;
        for i in 0..=500 {
            for j in 0..=500 {
                let (d1, d2) = (i as f64 * step, j as f64 * step);
                let e1 = 0.5 - d1 / 0.9;
                let e2 = 0.5 - d2 / 0.9;
                let rating_ok = d1 / 0.25 + d2 / 0.125 <= 1.0 + 1e-12;
                let fill_ok = e2 <= 1e-12 || e1 >= 0.5 - 1e-12;
                if rating_ok && fill_ok && e1 >= -1e-12 && e2 >= -1e-12 {
                    best = best.max(d1 + d2);
                }
            }
        }
        assert!((env.max_discharge - best).abs() < 1e-9, "{env:?} vs {best}");
        assert!((env.max_discharge - 0.125).abs() < 1e-12);
    }

    #[test]
    fn envelope_crosses_into_lower_segment_under_mixture() {
        let spec = StorageSpec::new(
            0.0,
            vec![seg(0.5, 0.25, 0.25, 1.0, 20.0), seg(1.0, 0.125, 0.25, 1.0, 20.0)],
        )
        .unwrap();
        // 0.05 MWh in the top segment: drain it (usage 0.4) then 0.6 * 0.25 below.
        let st = StorageState::from_soc(&spec, 0.55).unwrap();
        let env = feasible_envelope(&spec, &st);
        assert!((env.max_discharge - (0.05 + 0.15)).abs() < 1e-12);

        let clamp = spec.clone().with_crossing(CrossingRule::StartSegmentClamp);
        let env = feasible_envelope(&clamp, &st);
        assert!((env.max_discharge - 0.125).abs() < 1e-12);
    }

    #[test]
    fn apply_charge_and_identity() {
        let spec = StorageSpec::linear(1.0, 0.25, 0.9, 20.0).unwrap();
        let st = StorageState::from_soc(&spec, 0.5).unwrap();
        let disp = charge_dispatch(&spec, &st, 0.25).unwrap();
        let next = apply_dispatch(&spec, &st, &disp).unwrap();
        assert!((next.soc(&spec) - (0.5 + 0.25 * 0.9)).abs() < 1e-12);
        let same = apply_dispatch(&spec, &st, &Dispatch::idle(1)).unwrap();
        assert_eq!(same, st);
    }

    #[test]
    fn apply_discharge_drains_segment_four_exactly() {
        let spec = five_equal([0.25; 5]);
        let st = StorageState::from_soc(&spec, 0.8).unwrap();
        let disp = discharge_dispatch(&spec, &st, 0.18).unwrap();
        assert!((disp.d_seg[3] - 0.18).abs() < 1e-12);
        let next = apply_dispatch(&spec, &st, &disp).unwrap();
        assert_eq!(next.segments()[3], 0.0);
        assert!((next.soc(&spec) - 0.6).abs() < 1e-12);
    }

    #[test]
    fn apply_rejects_out_of_order_and_simultaneous() {
        let spec = five_equal([0.25; 5]);
        let st = StorageState::from_soc(&spec, 0.5).unwrap();
        let mut bad = Dispatch::idle(5);
        bad.d_seg[0] = 0.05;
        bad.d = 0.05;
        assert!(apply_dispatch(&spec, &st, &bad).is_err());

        let mut both = Dispatch::idle(5);
        both.d_seg[2] = 0.01;
        both.d = 0.01;
        both.p_seg[2] = 0.01;
        both.p = 0.01;
        assert!(apply_dispatch(&spec, &st, &both).is_err());

        let mut over = Dispatch::idle(5);
        over.d_seg[2] = 0.09;
        over.d_seg[1] = 0.2;
        over.d = 0.29;
        assert!(apply_dispatch(&spec, &st, &over).is_err());
    }

    #[test]
    fn project_clips_to_first_segment_rating() {
        let spec = five_equal([0.175, 0.25, 0.25, 0.25, 0.25]);
        let st = StorageState::from_soc(&spec, 0.2).unwrap();
        let out = project_dispatch(&spec, &st, 0.0, 0.25);
        // Grid search over feasible d.
        let env = feasible_envelope(&spec, &st);
        let oracle = (0..=25_000)
            .map(|i| i as f64 * 1e-5)
            .filter(|d| *d <= env.max_discharge + 1e-12)
            .min_by(|a, b| ((a - 0.25).powi(2)).total_cmp(&(b - 0.25).powi(2)))
            .unwrap();
        assert!((out.d - 0.175).abs() < 1e-12);
        assert!((out.d - oracle).abs() < 1e-5);
        assert_eq!(out.p, 0.0);
    }

    #[test]
    fn project_feasible_instruction_unchanged() {
        let spec = five_equal([0.25; 5]);
        let st = StorageState::from_soc(&spec, 0.5).unwrap();
        let out = project_dispatch(&spec, &st, 0.0, 0.1);
        assert!((out.d - 0.1).abs() < 1e-15);
        let out = project_dispatch(&spec, &st, 0.07, 0.0);
        assert!((out.p - 0.07).abs() < 1e-15);
    }

    #[test]
    fn project_both_sides_picks_best_branch() {
        let spec = StorageSpec::linear(1.0, 0.25, 0.9, 20.0).unwrap();
        for soc in [0.0, 0.05, 0.5, 0.97, 1.0] {
            let st = StorageState::from_soc(&spec, soc).unwrap();
            let out = project_dispatch(&spec, &st, 0.1, 0.1);
            let env = feasible_envelope(&spec, &st);
            let mut best = f64::INFINITY;
            for i in 0..=2000 {
                let x = i as f64 * 1e-4;
                if x <= env.max_charge + 1e-12 {
                    best = best.min((x - 0.1).powi(2) + 0.01);
                }
                if x <= env.max_discharge + 1e-12 {
                    best = best.min(0.01 + (x - 0.1).powi(2));
                }
            }
            let err = (out.p - 0.1).powi(2) + (out.d - 0.1).powi(2);
            assert!((err - best).abs() < 1e-9, "soc {soc}: {err} vs {best}");
            assert!(out.p == 0.0 || out.d == 0.0);
        }
    }

    #[test]
    fn aggregate_averages_by_width() {
        let spec = five_equal([0.175, 0.25, 0.25, 0.225, 0.125]);
        let one = spec.aggregate(1).unwrap();
        assert_eq!(one.len(), 1);
        assert!((one.segments()[0].d_rating - 0.205).abs() < 1e-12);
        let same = spec.aggregate(5).unwrap();
        for (a, b) in same.segments().iter().zip(spec.segments()) {
            assert!((a.d_rating - b.d_rating).abs() < 1e-12);
            assert!((a.e_end - b.e_end).abs() < 1e-12);
        }
    }

    #[test]
    fn delta_dispatch_matches_envelope_limits() {
        let spec = StorageSpec::linear(1.0, 0.25, 0.9, 20.0).unwrap();
        let st = StorageState::empty(&spec);
        let d = dispatch_for_delta(&spec, &st, 0.225).unwrap();
        assert!((d.p - 0.25).abs() < 1e-12);
        assert!(dispatch_for_delta(&spec, &st, 0.23).is_none());
        assert!(dispatch_for_delta(&spec, &st, -0.01).is_none());
    }
}
