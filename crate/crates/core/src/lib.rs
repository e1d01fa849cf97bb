pub mod distributions;
pub mod error;
pub mod hedging;
pub mod models;
pub mod pricing;
pub mod regression;
pub mod stats;
pub mod stochastic;
pub mod tree;
pub mod verify;

/// Version of this crate, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
