//! Core of the edge dynamic map testbed.
//!
//! The geometry in [`geo`] and the summaries in [`stats`] are generic over
//! the scalar type; the rest of the crate works in `f64` through the aliases below.

pub mod bench;
pub mod cam;
pub mod fcd;
pub mod fleet;
pub mod geo;
pub mod mec;
pub mod pubsub;
pub mod registry;
pub mod sim;
pub mod stats;
pub mod store;
pub mod topics;

pub use geo::{CellId, GeoError, Scalar};

/// WGS-84 position in `f64` degrees.
pub type GeoPoint = geo::GeoPoint<f64>;
/// Deployment hex grid in `f64`.
pub type HexGrid = geo::HexGrid<f64>;
/// Lat/lon bounding box in `f64` degrees.
pub type GeoBounds = geo::GeoBounds<f64>;
/// Latency summary in `f64` milliseconds.
pub type LatencyStats = stats::LatencyStats<f64>;
