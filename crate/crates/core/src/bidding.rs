//! Hourly SoC-segment bids from value curves.
//!
//! For each market segment `s` the marginal value `q` is averaged over `N_s`
//! SoC samples inside the segment and over the market intervals of the hour,
//! then turned into a discharge bid `G_s = C_s + q/eta_d_s` and a charge bid
//! `B_s = eta_p_s * q`. Binary-free clearing needs bids that strictly decrease
//! with SoC, which [`enforce_monotone`] restores with an isotonic fit.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::storage::StorageSpec;
use crate::valuation::{SocGrid, ValueCurve};

/// Minimum gap between adjacent segment bids ($/MWh).
pub const BID_GAP: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentBid {
    pub e_lo: f64,
    pub e_hi: f64,
    /// `G_s`: discharge above this price.
    pub discharge: f64,
    /// `B_s`: charge below this price.
    pub charge: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BidCurve {
    pub hour: usize,
    pub segments: Vec<SegmentBid>,
}

impl BidCurve {
    pub fn discharge_bids(&self) -> Vec<f64> {
        self.segments.iter().map(|b| b.discharge).collect()
    }

    pub fn charge_bids(&self) -> Vec<f64> {
        self.segments.iter().map(|b| b.charge).collect()
    }

    /// Errors unless both bid vectors strictly decrease with SoC.
    pub fn check_monotone(&self) -> Result<()> {
        for (s, w) in self.segments.windows(2).enumerate() {
            if !(w[1].discharge < w[0].discharge) {
                return Err(Error::NonMonotoneBids {
                    side: "discharge",
                    segment: s + 2,
                });
            }
            if !(w[1].charge < w[0].charge) {
                return Err(Error::NonMonotoneBids {
                    side: "charge",
                    segment: s + 2,
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplingPlan {
    samples_per_segment: usize,
}

impl SamplingPlan {
    pub fn new(samples_per_segment: usize) -> Result<Self> {
        if samples_per_segment == 0 {
            return Err(Error::InvalidInput("samples per segment must be at least 1".into()));
        }
        Ok(Self {
            samples_per_segment,
        })
    }

    pub fn samples_per_segment(&self) -> usize {
        self.samples_per_segment
    }
}

impl Default for SamplingPlan {
    fn default() -> Self {
        Self {
            samples_per_segment: 5,
        }
    }
}

/// Which market intervals of the hour feed the hourly bid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HourAveraging {
    #[default]
    IntervalMean,
    StartOfHour,
}

/// Grid indices of the `N_s` midpoint samples in each segment of `spec`.
fn sample_indices(spec: &StorageSpec, grid: &SocGrid, plan: SamplingPlan) -> Vec<Vec<usize>> {
    let n = plan.samples_per_segment;
    (0..spec.len())
        .map(|s| {
            let lo = spec.lower(s);
            let w = spec.width(s);
            (1..=n)
                .map(|i| grid.nearest(lo + (i as f64 - 0.5) * w / n as f64))
                .collect()
        })
        .collect()
}

/// Intervals `t` (1-based, reading `q_t`) whose bids come from `hour`.
fn hour_intervals(
    hour: usize,
    steps_per_hour: usize,
    horizon: usize,
    averaging: HourAveraging,
) -> std::ops::RangeInclusive<usize> {
    let first = hour * steps_per_hour + 1;
    let last = match averaging {
        HourAveraging::IntervalMean => ((hour + 1) * steps_per_hour).min(horizon),
        HourAveraging::StartOfHour => first,
    };
    first..=last
}

/// Bids from per-segment mean marginal values.
pub fn bids_from_values(spec: &StorageSpec, hour: usize, q_mean: &[f64]) -> BidCurve {
    let segments = spec
        .segments()
        .iter()
        .enumerate()
        .map(|(s, seg)| SegmentBid {
            e_lo: spec.lower(s),
            e_hi: seg.e_end,
            discharge: seg.cost + q_mean[s] / seg.eta_d,
            charge: seg.eta_p * q_mean[s],
        })
        .collect();
    BidCurve { hour, segments }
}

/// Hourly bid curve for the market segments of `spec`, averaging over all
/// market intervals of the hour.
pub fn make_bids(
    curve: &ValueCurve,
    spec: &StorageSpec,
    hour: usize,
    plan: SamplingPlan,
) -> Result<BidCurve> {
    make_bids_with(curve, spec, hour, plan, HourAveraging::IntervalMean)
}

pub fn make_bids_with(
    curve: &ValueCurve,
    spec: &StorageSpec,
    hour: usize,
    plan: SamplingPlan,
    averaging: HourAveraging,
) -> Result<BidCurve> {
    let steps_per_hour = steps_per_hour(curve.step_minutes())?;
    let range = hour_intervals(hour, steps_per_hour, curve.steps(), averaging);
    if range.is_empty() || *range.start() > curve.steps() {
        return Err(Error::OutOfRange(format!(
            "hour {hour} is not covered by a {}-step value curve",
            curve.steps()
        )));
    }
    let idx = sample_indices(spec, curve.grid(), plan);
    let mut sums = vec![0.0; spec.len()];
    let count = (range.end() - range.start() + 1) as f64;
    for t in range {
        let q = curve.q(t);
        for (s, ix) in idx.iter().enumerate() {
            sums[s] += ix.iter().map(|&i| q[i]).sum::<f64>() / ix.len() as f64;
        }
    }
    let mean: Vec<f64> = sums.iter().map(|v| v / count).collect();
    Ok(bids_from_values(spec, hour, &mean))
}

fn steps_per_hour(step_minutes: u32) -> Result<usize> {
    if step_minutes == 0 || 60 % step_minutes != 0 {
        return Err(Error::InvalidInput(format!(
            "step of {step_minutes} min does not divide an hour"
        )));
    }
    Ok((60 / step_minutes) as usize)
}

/// Accumulates hourly bids while value curves stream out of the backward
/// recursion, so year-long horizons never hold every curve in memory.
pub struct HourlyBidder {
    spec: StorageSpec,
    samples: Vec<Vec<usize>>,
    steps_per_hour: usize,
    horizon: usize,
    averaging: HourAveraging,
    sums: Vec<f64>,
    counts: Vec<usize>,
}

impl HourlyBidder {
    pub fn new(
        spec: &StorageSpec,
        grid: &SocGrid,
        step_minutes: u32,
        horizon: usize,
        plan: SamplingPlan,
        averaging: HourAveraging,
    ) -> Result<Self> {
        let steps_per_hour = steps_per_hour(step_minutes)?;
        let hours = horizon.div_ceil(steps_per_hour);
        Ok(Self {
            spec: spec.clone(),
            samples: sample_indices(spec, grid, plan),
            steps_per_hour,
            horizon,
            averaging,
            sums: vec![0.0; hours * spec.len()],
            counts: vec![0; hours],
        })
    }

    pub fn hours(&self) -> usize {
        self.counts.len()
    }

    /// Feeds `q_t`; curves for `t = 0` and intervals outside the averaging
    /// window are ignored.
    pub fn observe(&mut self, t: usize, q: &[f64]) {
        if t == 0 || t > self.horizon {
            return;
        }
        let hour = (t - 1) / self.steps_per_hour;
        if self.averaging == HourAveraging::StartOfHour && (t - 1) % self.steps_per_hour != 0 {
            return;
        }
        let n = self.spec.len();
        for (s, ix) in self.samples.iter().enumerate() {
            self.sums[hour * n + s] += ix.iter().map(|&i| q[i]).sum::<f64>() / ix.len() as f64;
        }
        self.counts[hour] += 1;
    }

    /// Raw bids per hour, then made strictly decreasing with gap `gap`.
    pub fn finish(self, gap: f64) -> Vec<BidCurve> {
        let n = self.spec.len();
        (0..self.counts.len())
            .map(|h| {
                let c = self.counts[h].max(1) as f64;
                let mean: Vec<f64> = self.sums[h * n..(h + 1) * n].iter().map(|v| v / c).collect();
                enforce_monotone(&bids_from_values(&self.spec, h, &mean), gap)
            })
            .collect()
    }
}

/// Least-squares non-increasing fit (pool adjacent violators).
pub fn pava_nonincreasing(y: &[f64]) -> Vec<f64> {
    // Blocks of (mean, weight).
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(y.len());
    for &v in y {
        blocks.push((v, 1));
        while blocks.len() > 1 {
            let (m1, w1) = blocks[blocks.len() - 1];
            let (m0, w0) = blocks[blocks.len() - 2];
            if m0 >= m1 {
                break;
            }
            blocks.pop();
            let w = w0 + w1;
            *blocks.last_mut().unwrap() = ((m0 * w0 as f64 + m1 * w1 as f64) / w as f64, w);
        }
    }
    blocks
        .into_iter()
        .flat_map(|(m, w)| std::iter::repeat(m).take(w))
        .collect()
}

/// Closest sequence (least squares) with `x_s - x_{s+1} >= gap`.
fn strictly_decreasing_fit(x: &[f64], gap: f64) -> Vec<f64> {
    let ok = x.windows(2).all(|w| w[0] - w[1] >= gap - 1e-12);
    if ok {
        return x.to_vec();
    }
    let shifted: Vec<f64> = x.iter().enumerate().map(|(s, v)| v + s as f64 * gap).collect();
    pava_nonincreasing(&shifted)
        .into_iter()
        .enumerate()
        .map(|(s, v)| v - s as f64 * gap)
        .collect()
}

/// Makes discharge and charge bids strictly decreasing in SoC, independently.
pub fn enforce_monotone(bids: &BidCurve, gap: f64) -> BidCurve {
    let g = strictly_decreasing_fit(&bids.discharge_bids(), gap);
    let b = strictly_decreasing_fit(&bids.charge_bids(), gap);
    BidCurve {
        hour: bids.hour,
        segments: bids
            .segments
            .iter()
            .zip(g.into_iter().zip(b))
            .map(|(seg, (discharge, charge))| SegmentBid {
                discharge,
                charge,
                ..*seg
            })
            .collect(),
    }
}
