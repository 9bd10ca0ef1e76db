//! Core data model, ingest pipeline, store, aggregates and scoring for
//! taxi pick-up point analysis.

pub mod aggregate;
pub mod clock;
pub mod config;
pub mod geo;
pub mod ingest;
pub mod poi;
pub mod scoring;
pub mod store;
pub mod synth;

pub use clock::{DateKey, StudyClock, TimeWindow};
pub use config::Config;
pub use geo::{GridConfig, HexIndex, LonLat};
pub use poi::{Poi, PoiCategory, PoiIndex};
pub use store::{Region, Store};
