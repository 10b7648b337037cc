//! Estimating two-week time-in-range metrics from sparse fingerstick glucose.

pub mod agp;
pub mod config;
pub mod data;
pub mod domain;
pub mod dpanet;
mod error;
pub mod eval;
pub mod experiment;
mod init;
pub mod persist;
pub mod sampling;
pub mod selector;
pub mod train;

pub use error::{CoreError, Result};
