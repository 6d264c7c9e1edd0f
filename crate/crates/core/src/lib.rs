//! Collateral-, credit- and funding-inclusive valuation of a single
//! derivative under piecewise-linear, sign-dependent rates.
//!
//! * [`pde`]: θ-scheme solver for the semilinear valuation PDE under either
//!   the repo drift or the risk-free drift.
//! * [`mc`]: regression-based backward simulation of the same BSDE.
//! * [`ledger`]: replay of the trading accounts along simulated paths.
//! * [`harness`]: scenario runs, invariance sweeps and reproducible output.

pub mod analytic;
pub mod config;
pub mod deal;
pub mod driver;
pub mod error;
pub mod harness;
pub mod ledger;
pub mod market;
pub mod mc;
pub mod pde;
pub mod rng;
pub mod schedule;
pub mod tridiag;

pub use deal::{CreditSpec, DealSpec, Dividend, Payoff, RateLeg};
pub use error::{Error, Result};
pub use market::{MarketSpec, TimeGrid, VolModel};
pub use schedule::Schedule;
