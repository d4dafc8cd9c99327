//! Relational annotation database for computer-vision datasets.
//!
//! Annotations live in a single SQLite file with five tables (images,
//! objects, properties, polygons, matches). The modules here import and
//! export public formats, filter and modify annotations, aggregate
//! statistics and evaluate predictions, all against one [`AnnotationDb`]
//! session.

pub mod error;
pub mod evaluate;
pub mod filters;
pub mod formats;
pub mod geometry;
pub mod info;
pub mod media;
pub mod modify;
pub mod store;

pub use error::{Error, Result};
pub use geometry::BBox;
pub use store::{
    AnnotationDb, ImageRecord, MatchRecord, NewObject, ObjectEntry, ObjectRecord, PolygonPoint,
    PropertyRecord, SessionMode, Snapshot, Violation,
};
