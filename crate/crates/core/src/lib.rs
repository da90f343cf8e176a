//! One-bit-aided modulo sampling for direction-of-arrival estimation.
//!
//! The crate simulates narrowband array snapshots, quantizes them with a
//! one-bit comparator alongside a low-resolution modulo ADC, recovers the
//! unfolded samples by blind integer forcing and estimates bearings with
//! subspace methods.

pub mod array;
pub mod bif;
pub mod covariance;
pub mod doa;
pub mod error;
pub mod lattice;
pub mod quantize;

pub use error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
