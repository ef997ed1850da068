//! Storage variants for the price-taker study.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::storage::{SegmentSpec, StorageSpec};

/// Ratings of the 1 MWh, 4-hour reference battery (MW).
pub const NOMINAL_RATING_MW: f64 = 0.25;
pub const NOMINAL_EFFICIENCY: f64 = 0.9;
pub const NOMINAL_COST: f64 = 20.0;

const NLF_DISCHARGE: [f64; 5] = [0.175, 0.25, 0.25, 0.25, 0.25];
const NLL_DISCHARGE: [f64; 5] = [0.25, 0.25, 0.25, 0.225, 0.125];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StorageVariant {
    Lin,
    Nla,
    Nlb,
    Nlc,
    Nlf,
    Nll,
}

impl StorageVariant {
    pub const ALL: [StorageVariant; 6] = [Self::Lin, Self::Nla, Self::Nlb, Self::Nlc, Self::Nlf, Self::Nll];

    pub fn name(self) -> &'static str {
        match self {
            Self::Lin => "Lin",
            Self::Nla => "NLA",
            Self::Nlb => "NLB",
            Self::Nlc => "NLC",
            Self::Nlf => "NLF",
            Self::Nll => "NLL",
        }
    }
}

impl fmt::Display for StorageVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StorageVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidInput(format!("unknown storage variant '{s}' (expected Lin, NLA, NLB, NLC, NLF or NLL)")))
    }
}

/// Editable five-segment template: 1 MWh, ratings in MW (one-hour step).
/// Power peaks in the middle of the SoC range and tapers at both ends;
/// efficiency and cost are best mid-range. These are plausible defaults,
/// not measured cell data.
pub fn nonlinear_template() -> StorageSpec {
    let d = [0.175, 0.25, 0.25, 0.225, 0.125];
    let p = [0.25, 0.25, 0.25, 0.2, 0.125];
    let eta = [0.88, 0.9, 0.92, 0.9, 0.88];
    let cost = [25.0, 20.0, 18.0, 20.0, 25.0];
    let segments = (0..5)
        .map(|s| SegmentSpec {
            e_end: 0.2 * (s + 1) as f64,
            cost: cost[s],
            d_rating: d[s],
            p_rating: p[s],
            eta_d: eta[s],
            eta_p: eta[s],
        })
        .collect();
    StorageSpec::new(0.0, segments).expect("template is valid")
}

/// Builds `variant` from a five-segment `base` (ratings in MW).
pub fn make_storage_variant(variant: StorageVariant, base: &StorageSpec) -> Result<StorageSpec> {
    if variant == StorageVariant::Lin {
        let capacity = base.capacity();
        let spec = StorageSpec::linear(capacity, NOMINAL_RATING_MW, NOMINAL_EFFICIENCY, NOMINAL_COST)?;
        return shift(spec, base.e_min());
    }
    if base.len() != 5 {
        return Err(Error::InvalidInput(format!(
            "variant {variant} needs the five-segment template, got {} segments",
            base.len()
        )));
    }
    let max_d = base.segments().iter().map(|s| s.d_rating).fold(0.0, f64::max);
    let max_p = base.segments().iter().map(|s| s.p_rating).fold(0.0, f64::max);
    let segments = base
        .segments()
        .iter()
        .enumerate()
        .map(|(s, seg)| {
            let mut seg = seg.clone();
            match variant {
                StorageVariant::Nlb => seg.d_rating = max_d,
                StorageVariant::Nlc => {
                    seg.d_rating = max_d;
                    seg.p_rating = max_p;
                }
                StorageVariant::Nlf => {
                    seg.d_rating = NLF_DISCHARGE[s];
                    seg.p_rating = max_p;
                }
                StorageVariant::Nll => {
                    seg.d_rating = NLL_DISCHARGE[s];
                    seg.p_rating = max_p;
                }
                _ => {}
            }
            seg
        })
        .collect();
    Ok(StorageSpec::new(base.e_min(), segments)?.with_crossing(base.crossing()))
}

fn shift(spec: StorageSpec, e_min: f64) -> Result<StorageSpec> {
    if e_min == 0.0 {
        return Ok(spec);
    }
    let segments = spec
        .segments()
        .iter()
        .map(|s| SegmentSpec { e_end: s.e_end + e_min, ..s.clone() })
        .collect();
    StorageSpec::new(e_min, segments)
}
