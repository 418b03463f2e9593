//! Search driver, on-disk formats and command line around `dggan-core`.

pub mod cli;
pub mod config;
pub mod error;
pub mod exec;
pub mod images;
pub mod ledger;
pub mod report;
pub mod runner;
pub mod store;

pub use config::RunConfig;
pub use error::{Error, Result};
