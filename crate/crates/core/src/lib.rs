//! State-of-charge segment market model for energy storage.
//!
//! Storage submits charge and discharge bids per SoC segment; the operator
//! tracks the SoC and clears whichever segment is active. The crate covers
//! the storage physics, the dynamic-programming bid design, single-period
//! clearing (price-taker and price-influencer), multi-period benchmarks and
//! the study harness behind the `socmarket` CLI.

pub mod benchmark;
pub mod bidding;
pub mod clearing;
pub mod error;
pub mod gridsim;
pub mod io;
pub mod storage;
pub mod study;
pub mod valuation;

pub use error::{Error, Result};
