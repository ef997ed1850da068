//! CSV and JSON file formats.
//!
//! Storage spec: optional leading comment `# e_min_mwh=<f64> step_minutes=<u32>`,
//! then `segment,e_end_mwh,cost_usd_per_mwh,d_rating_mw,p_rating_mw,eta_d,eta_p`
//! with segments numbered from 1. Prices: `timestamp_iso8601,price_usd_per_mwh`
//! at a uniform step. Bids: `hour,segment,e_lo_mwh,e_hi_mwh,discharge_bid,charge_bid`
//! with hours from 0 and segments from 1. Fleet:
//! `gen_id,c_lin,c_quad,c_noload,c_start,g_min_mw,g_max_mw,t_up_h,t_dn_h`.
//! Scenarios: `scenario,hour,demand_mw,wind_mw` with hours from 0.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use chrono::{DateTime, Duration, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::bidding::{BidCurve, SegmentBid};
use crate::error::{Error, Result};
use crate::gridsim::{Fleet, GeneratorSpec, ScenarioData};
use crate::storage::{SegmentSpec, StorageSpec};
use crate::valuation::{PriceSeries, SocGrid};

const TIME_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        message: message.into(),
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

/// Deserializes every record of `text` with its 1-based file line.
fn records<T: for<'de> Deserialize<'de>>(path: &Path, text: &str, line_offset: usize) -> Result<Vec<(usize, T)>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = rdr.headers().map_err(|e| parse_err(path, line_offset + 1, e.to_string()))?.clone();
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_err(path, line + line_offset, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize) + line_offset;
        let row = rec.deserialize(Some(&headers)).map_err(|e| parse_err(path, line, e.to_string()))?;
        out.push((line, row));
    }
    Ok(out)
}

fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes any serializable rows as CSV with a header.
pub fn write_rows<T: Serialize>(path: impl AsRef<Path>, rows: &[T]) -> Result<()> {
    write_csv(path.as_ref(), rows)
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

/// A storage spec as stored on disk: ratings in MW plus the dispatch step.
#[derive(Debug, Clone, PartialEq)]
pub struct StorageFile {
    pub spec: StorageSpec,
    pub step_minutes: u32,
}

impl StorageFile {
    /// The spec with ratings in MWh per dispatch step.
    pub fn per_step(&self) -> StorageSpec {
        self.spec.scale_ratings(self.step_minutes as f64 / 60.0)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct SegmentRow {
    segment: usize,
    e_end_mwh: f64,
    cost_usd_per_mwh: f64,
    d_rating_mw: f64,
    p_rating_mw: f64,
    eta_d: f64,
    eta_p: f64,
}

fn parse_metadata(path: &Path, line: &str) -> Result<(f64, u32)> {
    let mut e_min = 0.0;
    let mut step = 60;
    for pair in line.trim_start_matches('#').split_whitespace() {
        let (key, value) = pair
            .split_once('=')
            .ok_or_else(|| parse_err(path, 1, format!("metadata entry '{pair}' is not key=value")))?;
        let bad = |_| parse_err(path, 1, format!("bad value for {key}: '{value}'"));
        match key {
            "e_min_mwh" => e_min = value.parse().map_err(|e: std::num::ParseFloatError| bad(e.to_string()))?,
            "step_minutes" => step = value.parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
            _ => return Err(parse_err(path, 1, format!("unknown metadata key '{key}'"))),
        }
    }
    if step == 0 {
        return Err(parse_err(path, 1, "step_minutes must be positive"));
    }
    Ok((e_min, step))
}

/// Reads a storage spec; without the metadata line, `E_0 = 0` and the step is 60 min.
pub fn read_storage_spec(path: impl AsRef<Path>) -> Result<StorageFile> {
    let path = path.as_ref();
    let text = read_text(path)?;
    let (meta, body, offset) = match text.split_once('\n') {
        Some((first, rest)) if first.trim_start().starts_with('#') => (Some(first), rest, 1),
        _ => (None, text.as_str(), 0),
    };
    let (e_min, step_minutes) = match meta {
        Some(m) => parse_metadata(path, m)?,
        None => (0.0, 60),
    };
    let rows: Vec<(usize, SegmentRow)> = records(path, body, offset)?;
    if rows.is_empty() {
        return Err(parse_err(path, offset + 1, "no segments"));
    }
    let mut segments = Vec::with_capacity(rows.len());
    for (k, (line, r)) in rows.into_iter().enumerate() {
        if r.segment != k + 1 {
            return Err(parse_err(path, line, format!("expected segment {}, found {}", k + 1, r.segment)));
        }
        segments.push(SegmentSpec {
            e_end: r.e_end_mwh,
            cost: r.cost_usd_per_mwh,
            d_rating: r.d_rating_mw,
            p_rating: r.p_rating_mw,
            eta_d: r.eta_d,
            eta_p: r.eta_p,
        });
    }
    Ok(StorageFile {
        spec: StorageSpec::new(e_min, segments)?,
        step_minutes,
    })
}

/// Writes `spec` (ratings in MW) with its metadata line.
pub fn write_storage_spec(path: impl AsRef<Path>, spec: &StorageSpec, step_minutes: u32) -> Result<()> {
    let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
    for (s, seg) in spec.segments().iter().enumerate() {
        w.serialize(SegmentRow {
            segment: s + 1,
            e_end_mwh: seg.e_end,
            cost_usd_per_mwh: seg.cost,
            d_rating_mw: seg.d_rating,
            p_rating_mw: seg.p_rating,
            eta_d: seg.eta_d,
            eta_p: seg.eta_p,
        })?;
    }
    let body = w.into_inner().map_err(|e| Error::InvalidInput(e.to_string()))?;
    let mut text = format!("# e_min_mwh={} step_minutes={}\n", spec.e_min(), step_minutes);
    text.push_str(&String::from_utf8_lossy(&body));
    fs::write(path, text)?;
    Ok(())
}

/// Prices with the timestamp of the first interval.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceFile {
    pub start: NaiveDateTime,
    pub series: PriceSeries,
}

#[derive(Debug, Serialize, Deserialize)]
struct PriceRow {
    timestamp_iso8601: String,
    price_usd_per_mwh: f64,
}

fn parse_time(s: &str) -> Option<NaiveDateTime> {
    DateTime::parse_from_rfc3339(s)
        .map(|t| t.naive_utc())
        .ok()
        .or_else(|| NaiveDateTime::parse_from_str(s, TIME_FORMAT).ok())
        .or_else(|| NaiveDateTime::parse_from_str(s, "%Y-%m-%d %H:%M:%S").ok())
        .or_else(|| NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M").ok())
}

/// Reads prices; timestamps must increase by one uniform whole-minute step.
pub fn read_prices(path: impl AsRef<Path>) -> Result<PriceFile> {
    let path = path.as_ref();
    let text = read_text(path)?;
    let rows: Vec<(usize, PriceRow)> = records(path, &text, 0)?;
    if rows.len() < 2 {
        return Err(parse_err(path, 1, "need at least two prices to infer the step"));
    }
    let mut times = Vec::with_capacity(rows.len());
    for (line, r) in &rows {
        let t = parse_time(&r.timestamp_iso8601)
            .ok_or_else(|| parse_err(path, *line, format!("bad timestamp '{}'", r.timestamp_iso8601)))?;
        if !r.price_usd_per_mwh.is_finite() {
            return Err(parse_err(path, *line, "price is not finite"));
        }
        times.push(t);
    }
    let step = times[1] - times[0];
    if step <= Duration::zero() || step.num_seconds() % 60 != 0 {
        return Err(parse_err(path, rows[1].0, "timestamps must increase by whole minutes"));
    }
    for (k, w) in times.windows(2).enumerate() {
        if w[1] - w[0] != step {
            return Err(parse_err(path, rows[k + 1].0, format!("non-uniform step (expected {} min)", step.num_minutes())));
        }
    }
    let series = PriceSeries::new(
        step.num_minutes() as u32,
        rows.iter().map(|(_, r)| r.price_usd_per_mwh).collect(),
    )?;
    Ok(PriceFile { start: times[0], series })
}

pub fn write_prices(path: impl AsRef<Path>, start: NaiveDateTime, series: &PriceSeries) -> Result<()> {
    let step = Duration::minutes(series.step_minutes() as i64);
    let rows = series.prices().iter().enumerate().map(|(k, p)| PriceRow {
        timestamp_iso8601: (start + step * k as i32).format(TIME_FORMAT).to_string(),
        price_usd_per_mwh: *p,
    });
    write_csv(path.as_ref(), rows)
}

#[derive(Debug, Serialize, Deserialize)]
struct BidRow {
    hour: usize,
    segment: usize,
    e_lo_mwh: f64,
    e_hi_mwh: f64,
    discharge_bid: f64,
    charge_bid: f64,
}

pub fn write_bids(path: impl AsRef<Path>, bids: &[BidCurve]) -> Result<()> {
    let rows = bids.iter().flat_map(|c| {
        c.segments.iter().enumerate().map(move |(s, b)| BidRow {
            hour: c.hour,
            segment: s + 1,
            e_lo_mwh: b.e_lo,
            e_hi_mwh: b.e_hi,
            discharge_bid: b.discharge,
            charge_bid: b.charge,
        })
    });
    write_csv(path.as_ref(), rows)
}

/// Reads bids; hours must run 0, 1, ... with segments 1..S in order, and
/// every curve must be strictly decreasing in SoC.
pub fn read_bids(path: impl AsRef<Path>) -> Result<Vec<BidCurve>> {
    let path = path.as_ref();
    let text = read_text(path)?;
    let rows: Vec<(usize, BidRow)> = records(path, &text, 0)?;
    let mut curves: Vec<BidCurve> = Vec::new();
    for (line, r) in rows {
        if r.segment == 1 {
            if r.hour != curves.len() {
                return Err(parse_err(path, line, format!("expected hour {}, found {}", curves.len(), r.hour)));
            }
            curves.push(BidCurve { hour: r.hour, segments: Vec::new() });
        }
        let Some(c) = curves.last_mut().filter(|c| c.hour == r.hour && c.segments.len() + 1 == r.segment) else {
            return Err(parse_err(path, line, format!("unexpected hour {} segment {}", r.hour, r.segment)));
        };
        c.segments.push(SegmentBid {
            e_lo: r.e_lo_mwh,
            e_hi: r.e_hi_mwh,
            discharge: r.discharge_bid,
            charge: r.charge_bid,
        });
    }
    if let Some(c) = curves.iter().find(|c| c.segments.len() != curves[0].segments.len()) {
        return Err(parse_err(path, 0, format!("hour {} has {} segments, hour 0 has {}", c.hour, c.segments.len(), curves[0].segments.len())));
    }
    for c in &curves {
        c.check_monotone()?;
    }
    Ok(curves)
}

#[derive(Debug, Serialize, Deserialize)]
struct FleetRow {
    gen_id: String,
    c_lin: f64,
    c_quad: f64,
    c_noload: f64,
    c_start: f64,
    g_min_mw: f64,
    g_max_mw: f64,
    t_up_h: u32,
    t_dn_h: u32,
}

pub fn read_fleet(path: impl AsRef<Path>) -> Result<Fleet> {
    let path = path.as_ref();
    let text = read_text(path)?;
    let rows: Vec<(usize, FleetRow)> = records(path, &text, 0)?;
    let mut units = Vec::with_capacity(rows.len());
    for (line, r) in rows {
        let g = GeneratorSpec {
            id: r.gen_id,
            c_lin: r.c_lin,
            c_quad: r.c_quad,
            c_noload: r.c_noload,
            c_start: r.c_start,
            g_min: r.g_min_mw,
            g_max: r.g_max_mw,
            t_up: r.t_up_h,
            t_dn: r.t_dn_h,
        };
        g.validate().map_err(|e| parse_err(path, line, e.to_string()))?;
        units.push(g);
    }
    Fleet::new(units)
}

pub fn write_fleet(path: impl AsRef<Path>, fleet: &Fleet) -> Result<()> {
    let rows = fleet.generators().iter().map(|g| FleetRow {
        gen_id: g.id.clone(),
        c_lin: g.c_lin,
        c_quad: g.c_quad,
        c_noload: g.c_noload,
        c_start: g.c_start,
        g_min_mw: g.g_min,
        g_max_mw: g.g_max,
        t_up_h: g.t_up,
        t_dn_h: g.t_dn,
    });
    write_csv(path.as_ref(), rows)
}

#[derive(Debug, Serialize, Deserialize)]
struct ScenarioRow {
    scenario: String,
    hour: usize,
    demand_mw: f64,
    wind_mw: f64,
}

/// Reads scenarios in order of first appearance; each needs hours 0..H-1.
pub fn read_scenarios(path: impl AsRef<Path>) -> Result<Vec<ScenarioData>> {
    let path = path.as_ref();
    let text = read_text(path)?;
    let rows: Vec<(usize, ScenarioRow)> = records(path, &text, 0)?;
    let mut order: Vec<String> = Vec::new();
    let mut hours: BTreeMap<String, BTreeMap<usize, (usize, f64, f64)>> = BTreeMap::new();
    for (line, r) in rows {
        if !hours.contains_key(&r.scenario) {
            order.push(r.scenario.clone());
        }
        let entry = hours.entry(r.scenario.clone()).or_default();
        if entry.insert(r.hour, (line, r.demand_mw, r.wind_mw)).is_some() {
            return Err(parse_err(path, line, format!("duplicate hour {} in scenario {}", r.hour, r.scenario)));
        }
    }
    if order.is_empty() {
        return Err(parse_err(path, 1, "no scenarios"));
    }
    order
        .into_iter()
        .map(|id| {
            let h = &hours[&id];
            if let Some((k, _)) = h.keys().enumerate().find(|(k, hour)| *k != **hour) {
                return Err(parse_err(path, 0, format!("scenario {id} is missing hour {k}")));
            }
            let line = h.values().next().map_or(0, |v| v.0);
            ScenarioData::new(id.clone(), h.values().map(|v| v.1).collect(), h.values().map(|v| v.2).collect())
                .map_err(|e| parse_err(path, line, e.to_string()))
        })
        .collect()
}

pub fn write_scenarios(path: impl AsRef<Path>, scenarios: &[ScenarioData]) -> Result<()> {
    let rows = scenarios.iter().flat_map(|s| {
        (0..s.hours()).map(move |h| ScenarioRow {
            scenario: s.id.clone(),
            hour: h,
            demand_mw: s.demand()[h],
            wind_mw: s.wind()[h],
        })
    });
    write_csv(path.as_ref(), rows)
}

#[derive(Debug, Serialize)]
struct ValueRow {
    t: usize,
    e_mwh: f64,
    q_usd_per_mwh: f64,
}

/// Streams value curves to `t,e_mwh,q_usd_per_mwh` rows.
pub struct ValueCurveWriter {
    writer: csv::Writer<fs::File>,
    grid: Vec<f64>,
}

impl ValueCurveWriter {
    pub fn create(path: impl AsRef<Path>, grid: &SocGrid) -> Result<Self> {
        Ok(Self {
            writer: csv::Writer::from_path(path)?,
            grid: grid.values(),
        })
    }

    pub fn push(&mut self, t: usize, q: &[f64]) -> Result<()> {
        for (e, v) in self.grid.iter().zip(q) {
            self.writer.serialize(ValueRow { t, e_mwh: *e, q_usd_per_mwh: *v })?;
        }
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.writer.flush()?;
        Ok(())
    }
}
