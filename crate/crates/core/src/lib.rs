//! Floor-count estimation for street-level building imagery: metadata
//! ingestion, footprint matching, crop filtering, capture planning, the
//! hierarchical floor head and evaluation.

pub mod evaluation;
pub mod footprint;
pub mod geo;
pub mod gpx;
pub mod head;
pub mod ingestion;
pub mod matcher;
pub mod config;
pub mod pipeline;
pub mod planner;
pub mod polygon;
pub mod quality;
pub mod stats;
pub mod synthetic;

pub use footprint::{BuildingAttributes, Footprint, FootprintStore, RoofType};
pub use geo::LonLat;
pub use head::{ClassPmf, FloorLabel, HeadOutputs, RoofLabel, SubsetPartition, Variant};
pub use ingestion::{BoundingBox, ImageMeta};
pub use matcher::{CropBox, MatchResult};
