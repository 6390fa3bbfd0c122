//! Data side of the fire arrival time reconstruction pipeline.
//!
//! Everything here is plain raster arithmetic: the fast-marching spread
//! surrogate that produces training targets, the augmentation and
//! observation-operator stages that turn them into `(τ, τ̄, h)` tuples,
//! ingestion of satellite detection records, ensemble statistics over
//! generator samples and perimeter agreement metrics.

pub mod augment;
pub mod contour;
pub mod dataset;
pub mod ensemble;
pub mod error;
pub mod eval;
pub mod ingest;
pub mod obs;
pub mod raster;
pub mod seed;
pub mod surrogate;

pub use error::{Error, Result};
pub use raster::{FieldKind, GeoPoint, GridSpec, Raster, BACKGROUND_HOURS};
