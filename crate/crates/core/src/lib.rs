//! Travel-time estimation for vehicle trips on a grid-partitioned city.
//!
//! A trajectory of GPS fixes is traced into the sequence of grid cells it
//! crosses ([`grid`]). Each cell gets spatial and temporal embeddings, recent
//! and same-hour-last-week traffic statistics ([`traffic`]) and a driving
//! state ([`features`]). A bidirectional LSTM over those vectors predicts the
//! time spent in every cell; prefix and suffix sums of the per-cell times are
//! supervised against the observed leave times of sampled cells ([`model`]).
//!
//! Everything runs on a small reverse-mode autodiff engine ([`autograd`]) in
//! `f64`, seeded end to end, so a configuration and its inputs determine the
//! trained parameters bit for bit.
//!
//! ```
//! use tte::grid::{trace_path, BBox, GpsPoint, GridSpec};
//! use tte::model::SupervisionTargets;
//!
//! let spec = GridSpec::new(BBox::new(41.10, -8.70, 41.20, -8.60), 10).unwrap();
//! let fixes = [
//!     GpsPoint::new(41.105, -8.695, 0.0),
//!     GpsPoint::new(41.125, -8.655, 45.0),
//!     GpsPoint::new(41.155, -8.625, 120.0),
//! ];
//! let path = trace_path(&spec, &fixes).unwrap();
//! let targets = SupervisionTargets::from_path(&path);
//! assert_eq!(targets.total, 120.0);
//! assert_eq!(targets.sample_count(), 3);
//! ```
//!
//! [`pipeline`] strings the pieces together the way the `tte` binary does;
//! [`synth`] generates a city with known speeds to train and test on.

pub mod autograd;
mod binio;
pub mod checkpoint;
pub mod config;
pub mod diagnostics;
pub mod error;
pub mod features;
pub mod grid;
pub mod ingest;
pub mod manifest;
pub mod model;
pub mod pipeline;
pub mod synth;
pub mod traffic;
pub mod train;

pub use error::{Error, Result};
