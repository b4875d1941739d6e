//! Implied volatility smoothing toolkit.
//!
//! The crate turns raw option quotes into arbitrage-validated smoothed
//! implied-volatility surfaces. The smoother is an interpolating graph
//! neural operator trained with no-arbitrage penalties; SVI and SSVI are
//! provided as a calibration baseline and as a synthetic-data generator.
//!
//! Pipeline stages map onto the top-level modules:
//!
//! - [`black_scholes`]: normalized pricing, Vega, implied-vol inversion
//! - [`market_data`]: quote ingestion, forward extraction, snapshot building
//! - [`arbitrage`]: butterfly/calendar validation and implied densities
//! - [`svi`]: raw-SVI slices, calibration, and the SSVI surface generator
//! - [`gno`]: graph construction, the operator forward pass, exact gradients
//! - [`training`]: loss suite, AdamW, training/finetuning loops
//! - [`metrics`]: evaluation metrics and benchmark summaries
//! - [`cli`]: the command-line entry point wiring everything together

pub mod arbitrage;
pub mod black_scholes;
pub mod cli;
pub mod gno;
pub mod market_data;
pub mod metrics;
pub mod svi;
pub mod training;

pub use market_data::{Domain, OptionRecord, SurfaceSnapshot};
