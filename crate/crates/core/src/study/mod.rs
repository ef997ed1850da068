//! End-to-end studies: price-taker backtests and the price-influencer sweep.

pub mod priceinfluencer;
pub mod pricetaker;
pub mod synthetic;
pub mod variants;

pub use pricetaker::{
    band_share, design_bids, run_model, run_pricetaker_study, settle, simulate_rtd, soc_histogram, MarketModel,
    ModelRun, PriceTakerConfig, ProfitReport, Settlement,
};
pub use synthetic::{synthetic_fleet, synthetic_prices, synthetic_scenarios, PriceModel, YEAR_5MIN};
pub use variants::{make_storage_variant, nonlinear_template, StorageVariant};
pub use priceinfluencer::{influencer_bids, run_priceinfluencer_study, InfluencerConfig, SweepReport, SweepRow};
