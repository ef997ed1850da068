use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use socmarket::bidding::{HourAveraging, SamplingPlan};
use socmarket::io::{
    read_bids, read_fleet, read_prices, read_scenarios, read_storage_spec, write_bids, write_fleet, write_json,
    write_prices, write_rows, write_scenarios, write_storage_spec, ValueCurveWriter,
};
use socmarket::storage::StorageSpec;
use socmarket::study::{
    band_share, design_bids, make_storage_variant, nonlinear_template, run_priceinfluencer_study, run_pricetaker_study,
    soc_histogram, synthetic_fleet, synthetic_prices, synthetic_scenarios, InfluencerConfig, MarketModel,
    PriceTakerConfig, StorageVariant,
};
use socmarket::valuation::{backward_induction_with, check_resolution, upsample_prices, PriceSeries, SocGrid};
use socmarket::{Error, Result};

#[derive(Parser)]
#[command(name = "socmarket", version, about = "SoC-segment storage market simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and check input files.
    Validate(ValidateArgs),
    /// Emit marginal value curves q_t on the SoC grid.
    Value(ValueArgs),
    /// Emit hourly SoC-segment bids.
    Bid(BidArgs),
    /// Price-taker backtest over Multi and RTD-k models.
    Backtest(BacktestArgs),
    /// Price-influencer sweep over storage sizes and segment counts.
    Market(MarketArgs),
    /// Write seeded synthetic prices, fleet, scenarios and storage specs.
    GenSynthetic(GenArgs),
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    storage: Option<PathBuf>,
    #[arg(long)]
    prices: Option<PathBuf>,
    #[arg(long)]
    bids: Option<PathBuf>,
    #[arg(long)]
    fleet: Option<PathBuf>,
    #[arg(long)]
    scenarios: Option<PathBuf>,
}

/// Storage from a spec file or a built-in variant of the five-segment template.
#[derive(Args)]
struct StorageArgs {
    /// Storage spec CSV (ratings in MW).
    #[arg(long, conflicts_with = "variant")]
    storage: Option<PathBuf>,
    /// Built-in variant: lin, nla, nlb, nlc, nlf, nll.
    #[arg(long)]
    variant: Option<String>,
    /// Five-segment template the variant is derived from (default: built-in).
    #[arg(long, requires = "variant")]
    template: Option<PathBuf>,
}

impl StorageArgs {
    /// Storage with ratings in MW.
    fn load(&self) -> Result<StorageSpec> {
        match (&self.storage, &self.variant) {
            (Some(path), _) => Ok(read_storage_spec(path)?.spec),
            (None, Some(name)) => {
                let base = match &self.template {
                    Some(p) => read_storage_spec(p)?.spec,
                    None => nonlinear_template(),
                };
                make_storage_variant(name.parse::<StorageVariant>()?, &base)
            }
            (None, None) => Err(Error::InvalidInput("give --storage or --variant".into())),
        }
    }
}

/// Prices from a file or the synthetic generator.
#[derive(Args)]
struct PriceArgs {
    /// Price CSV (timestamp, $/MWh) at a uniform step.
    #[arg(long, conflicts_with = "synthetic_seed")]
    prices: Option<PathBuf>,
    /// Generate prices with this seed instead of reading a file.
    #[arg(long)]
    synthetic_seed: Option<u64>,
    /// Days of synthetic prices.
    #[arg(long, default_value_t = 365)]
    days: usize,
    /// Step of synthetic prices (minutes).
    #[arg(long, default_value_t = 5)]
    step_minutes: u32,
}

impl PriceArgs {
    fn load(&self) -> Result<PriceSeries> {
        match (&self.prices, self.synthetic_seed) {
            (Some(path), _) => Ok(read_prices(path)?.series),
            (None, Some(seed)) => synthetic_prices(seed, self.days, self.step_minutes),
            (None, None) => Err(Error::InvalidInput("give --prices or --synthetic-seed".into())),
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Averaging {
    IntervalMean,
    StartOfHour,
}

impl From<Averaging> for HourAveraging {
    fn from(a: Averaging) -> Self {
        match a {
            Averaging::IntervalMean => HourAveraging::IntervalMean,
            Averaging::StartOfHour => HourAveraging::StartOfHour,
        }
    }
}

#[derive(Args)]
struct DesignArgs {
    /// SoC grid points.
    #[arg(long, default_value_t = 501)]
    grid_points: usize,
    /// Value samples per segment (N_s).
    #[arg(long, default_value_t = 5)]
    samples: usize,
    #[arg(long, value_enum, default_value_t = Averaging::IntervalMean)]
    averaging: Averaging,
    /// Value at this step (minutes) instead of the price step.
    #[arg(long)]
    valuation_step: Option<u32>,
    /// Initial SoC as a fraction of the usable range.
    #[arg(long, default_value_t = 0.0)]
    initial_soc: f64,
}

impl DesignArgs {
    fn config(&self) -> Result<PriceTakerConfig> {
        Ok(PriceTakerConfig {
            grid_points: self.grid_points,
            samples: SamplingPlan::new(self.samples)?,
            averaging: self.averaging.into(),
            valuation_step: self.valuation_step,
            initial_soc: self.initial_soc,
            ..Default::default()
        })
    }
}

#[derive(Args)]
struct ValueArgs {
    #[command(flatten)]
    storage: StorageArgs,
    #[command(flatten)]
    prices: PriceArgs,
    #[arg(long, default_value_t = 501)]
    grid_points: usize,
    #[arg(long)]
    valuation_step: Option<u32>,
    /// Keep every k-th curve (t = 0 and t = T are always kept).
    #[arg(long, default_value_t = 1)]
    every: usize,
    /// Output CSV.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BidArgs {
    #[command(flatten)]
    storage: StorageArgs,
    #[command(flatten)]
    prices: PriceArgs,
    #[command(flatten)]
    design: DesignArgs,
    /// Bid segments per hour (RTD-k).
    #[arg(long, default_value_t = 5)]
    segments: usize,
    /// Output CSV.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BacktestArgs {
    #[command(flatten)]
    storage: StorageArgs,
    #[command(flatten)]
    prices: PriceArgs,
    #[command(flatten)]
    design: DesignArgs,
    /// Comma-separated models, e.g. multi,rtd-5,rtd-1.
    #[arg(long, default_value = "multi,rtd-5,rtd-1", value_delimiter = ',')]
    models: Vec<String>,
    /// SoC histogram bins.
    #[arg(long, default_value_t = 10)]
    bins: usize,
    /// Also write the SoC trajectory of every model.
    #[arg(long)]
    trajectory: bool,
    /// Directory for the reports (created if missing).
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct MarketArgs {
    #[arg(long, requires = "scenarios", conflicts_with = "synthetic_seed")]
    fleet: Option<PathBuf>,
    #[arg(long, requires = "fleet")]
    scenarios: Option<PathBuf>,
    /// Use the synthetic 10-unit fleet and 5 scenarios from this seed.
    #[arg(long)]
    synthetic_seed: Option<u64>,
    /// Storage power as fractions of peak demand.
    #[arg(long, default_value = "0,0.05,0.1,0.15,0.2", value_delimiter = ',')]
    capacities: Vec<f64>,
    #[arg(long, default_value = "1,2,5,10", value_delimiter = ',')]
    segments: Vec<usize>,
    #[arg(long, default_value_t = 401)]
    grid_points: usize,
    #[arg(long, default_value_t = 4.0)]
    duration_hours: f64,
    #[arg(long, default_value_t = 0.9)]
    efficiency: f64,
    #[arg(long, default_value_t = 10.0)]
    discharge_cost: f64,
    /// Directory for the reports (created if missing).
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 365)]
    days: usize,
    #[arg(long, default_value_t = 5)]
    step_minutes: u32,
    #[arg(long, default_value_t = 5)]
    scenarios: usize,
    /// Directory for the reports (created if missing).
    #[arg(long)]
    out_dir: PathBuf,
}

fn validate(a: &ValidateArgs) -> Result<serde_json::Value> {
    let mut out = serde_json::Map::new();
    if let Some(p) = &a.storage {
        let f = read_storage_spec(p)?;
        out.insert(
            "storage".into(),
            json!({"segments": f.spec.len(), "e_min_mwh": f.spec.e_min(), "e_max_mwh": f.spec.e_max(), "step_minutes": f.step_minutes}),
        );
    }
    if let Some(p) = &a.prices {
        let f = read_prices(p)?;
        out.insert(
            "prices".into(),
            json!({"intervals": f.series.len(), "step_minutes": f.series.step_minutes(), "start": f.start.to_string()}),
        );
    }
    if let Some(p) = &a.bids {
        let b = read_bids(p)?;
        out.insert("bids".into(), json!({"hours": b.len(), "segments": b.first().map_or(0, |c| c.segments.len())}));
    }
    if let Some(p) = &a.fleet {
        let f = read_fleet(p)?;
        out.insert("fleet".into(), json!({"units": f.len(), "capacity_mw": f.capacity()}));
    }
    if let Some(p) = &a.scenarios {
        let s = read_scenarios(p)?;
        out.insert("scenarios".into(), json!({"count": s.len(), "hours": s.first().map_or(0, |s| s.hours())}));
    }
    if out.is_empty() {
        return Err(Error::InvalidInput("nothing to validate".into()));
    }
    Ok(json!({"ok": true, "files": out}))
}

fn value(a: &ValueArgs) -> Result<serde_json::Value> {
    let spec_mw = a.storage.load()?;
    let mut prices = a.prices.load()?;
    if let Some(m) = a.valuation_step {
        prices = upsample_prices(&prices, m)?;
    }
    let spec = spec_mw.scale_ratings(prices.step_hours());
    let grid = SocGrid::for_spec(&spec, a.grid_points)?;
    check_resolution(&spec, &grid)?;
    let every = a.every.max(1);
    let horizon = prices.len();
    let mut rows: Vec<(usize, Vec<f64>)> = Vec::new();
    backward_induction_with(&spec, &prices, &grid, |t, q| {
        if t % every == 0 || t == horizon {
            rows.push((t, q.to_vec()));
        }
    })?;
    let mut w = ValueCurveWriter::create(&a.out, &grid)?;
    for (t, q) in rows.iter().rev() {
        w.push(*t, q)?;
    }
    w.finish()?;
    Ok(json!({"ok": true, "curves": rows.len(), "grid_points": grid.points(), "out": a.out}))
}

fn bid(a: &BidArgs) -> Result<serde_json::Value> {
    let spec = a.storage.load()?;
    let prices = a.prices.load()?;
    let bids = design_bids(&spec, &prices, a.segments, &a.design.config()?)?;
    write_bids(&a.out, &bids)?;
    Ok(json!({"ok": true, "hours": bids.len(), "segments": a.segments, "out": a.out}))
}

#[derive(Serialize)]
struct HistogramRow {
    model: String,
    bin_lo: f64,
    bin_hi: f64,
    share: f64,
}

#[derive(Serialize)]
struct TrajectoryRow {
    model: String,
    t: usize,
    soc_mwh: f64,
}

fn backtest(a: &BacktestArgs) -> Result<serde_json::Value> {
    let spec = a.storage.load()?;
    let prices = a.prices.load()?;
    let models = a.models.iter().map(|m| m.parse::<MarketModel>()).collect::<Result<Vec<_>>>()?;
    fs::create_dir_all(&a.out_dir)?;
    let runs = run_pricetaker_study(&spec, &prices, &models, &a.design.config()?)?;
    let reports: Vec<_> = runs.iter().map(|r| r.report.clone()).collect();
    write_rows(a.out_dir.join("report.csv"), &reports)?;

    let bins = a.bins.max(1);
    let mut hist = Vec::new();
    for r in &runs {
        for (b, share) in soc_histogram(&spec, &r.socs, bins).into_iter().enumerate() {
            hist.push(HistogramRow {
                model: r.model.to_string(),
                bin_lo: b as f64 / bins as f64,
                bin_hi: (b + 1) as f64 / bins as f64,
                share,
            });
        }
    }
    write_rows(a.out_dir.join("soc_histogram.csv"), &hist)?;
    if a.trajectory {
        let rows: Vec<TrajectoryRow> = runs
            .iter()
            .flat_map(|r| {
                r.socs.iter().enumerate().map(|(t, e)| TrajectoryRow { model: r.model.to_string(), t, soc_mwh: *e })
            })
            .collect();
        write_rows(a.out_dir.join("soc_trajectory.csv"), &rows)?;
    }
    let band: Vec<_> = runs
        .iter()
        .map(|r| json!({"model": r.model.to_string(), "share_20_60": band_share(&spec, &r.socs, 0.2, 0.6)}))
        .collect();
    let summary = json!({
        "ok": true,
        "intervals": prices.len(),
        "step_minutes": prices.step_minutes(),
        "segments": spec.len(),
        "reports": reports,
        "soc_band": band,
    });
    write_json(a.out_dir.join("summary.json"), &summary)?;
    Ok(summary)
}

#[derive(Serialize)]
struct CostPoint {
    capacity_fraction: f64,
    power_mw: f64,
    model: String,
    system_cost: f64,
    normalized_cost: f64,
}

#[derive(Serialize)]
struct PricePoint {
    capacity_fraction: f64,
    power_mw: f64,
    model: String,
    average_price: f64,
    price_std: f64,
}

#[derive(Serialize)]
struct ProfitPoint {
    capacity_fraction: f64,
    power_mw: f64,
    model: String,
    storage_profit: f64,
    normalized_profit: Option<f64>,
}

fn market(a: &MarketArgs) -> Result<serde_json::Value> {
    let (fleet, scenarios) = match (&a.fleet, &a.scenarios, a.synthetic_seed) {
        (Some(f), Some(s), _) => (read_fleet(f)?, read_scenarios(s)?),
        (None, None, Some(seed)) => (synthetic_fleet(seed)?, synthetic_scenarios(seed, 5)?),
        _ => return Err(Error::InvalidInput("give --fleet and --scenarios, or --synthetic-seed".into())),
    };
    let cfg = InfluencerConfig {
        capacity_fractions: a.capacities.clone(),
        segment_counts: a.segments.clone(),
        duration_hours: a.duration_hours,
        efficiency: a.efficiency,
        discharge_cost: a.discharge_cost,
        grid_points: a.grid_points,
        ..Default::default()
    };
    fs::create_dir_all(&a.out_dir)?;
    let report = run_priceinfluencer_study(&fleet, &scenarios, &cfg)?;
    write_rows(a.out_dir.join("sweep.csv"), &report.rows)?;
    let cost: Vec<_> = report
        .rows
        .iter()
        .map(|r| CostPoint {
            capacity_fraction: r.capacity_fraction,
            power_mw: r.power_mw,
            model: r.model.clone(),
            system_cost: r.system_cost,
            normalized_cost: r.normalized_cost,
        })
        .collect();
    let price: Vec<_> = report
        .rows
        .iter()
        .map(|r| PricePoint {
            capacity_fraction: r.capacity_fraction,
            power_mw: r.power_mw,
            model: r.model.clone(),
            average_price: r.average_price,
            price_std: r.price_std,
        })
        .collect();
    let profit: Vec<_> = report
        .rows
        .iter()
        .map(|r| {
            let multi = report.row(r.capacity_fraction, None).map(|m| m.storage_profit);
            ProfitPoint {
                capacity_fraction: r.capacity_fraction,
                power_mw: r.power_mw,
                model: r.model.clone(),
                storage_profit: r.storage_profit,
                normalized_profit: multi.filter(|m| m.abs() > 1e-9).map(|m| r.storage_profit / m),
            }
        })
        .collect();
    write_rows(a.out_dir.join("plot_cost.csv"), &cost)?;
    write_rows(a.out_dir.join("plot_price.csv"), &price)?;
    write_rows(a.out_dir.join("plot_profit.csv"), &profit)?;
    let summary = json!({"ok": true, "report": report});
    write_json(a.out_dir.join("summary.json"), &summary)?;
    Ok(summary)
}

fn gen_synthetic(a: &GenArgs) -> Result<serde_json::Value> {
    let dir: &Path = &a.out_dir;
    fs::create_dir_all(dir)?;
    let start = NaiveDate::from_ymd_opt(2016, 1, 1)
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .expect("valid date");
    let prices = synthetic_prices(a.seed, a.days, a.step_minutes)?;
    write_prices(dir.join("prices.csv"), start, &prices)?;
    write_fleet(dir.join("fleet.csv"), &synthetic_fleet(a.seed)?)?;
    write_scenarios(dir.join("scenarios.csv"), &synthetic_scenarios(a.seed, a.scenarios)?)?;
    let template = nonlinear_template();
    write_storage_spec(dir.join("storage_template.csv"), &template, 60)?;
    for v in StorageVariant::ALL {
        let spec = make_storage_variant(v, &template)?;
        write_storage_spec(dir.join(format!("storage_{}.csv", v.name().to_lowercase())), &spec, 60)?;
    }
    Ok(json!({"ok": true, "intervals": prices.len(), "out_dir": dir}))
}

fn run(cli: &Cli) -> Result<serde_json::Value> {
    match &cli.command {
        Command::Validate(a) => validate(a),
        Command::Value(a) => value(a),
        Command::Bid(a) => bid(a),
        Command::Backtest(a) => backtest(a),
        Command::Market(a) => market(a),
        Command::GenSynthetic(a) => gen_synthetic(a),
    }
}

fn fail(kind: &str, message: String) -> ExitCode {
    eprintln!("{}", json!({"error": {"kind": kind, "message": message}}));
    ExitCode::FAILURE
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail("usage", e.to_string().trim().to_string()),
    };
    match run(&cli) {
        Ok(v) => {
            println!("{v}");
            ExitCode::SUCCESS
        }
        Err(e) => fail(e.kind(), e.to_string()),
    }
}
