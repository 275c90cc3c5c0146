//! Standardization, merging, auditing, splitting and COCO-style evaluation of
//! blood-cell detection datasets.

pub mod audit;
pub mod cli;
pub mod error;
pub mod evaluate;
pub mod geometry;
pub mod manifest;
pub mod merge;
pub mod seed;
pub mod split;
pub mod standardize;

pub use error::{Error, Result};
pub use geometry::{BoundingBox, CornerBox, SizeClass};
pub use manifest::{Annotation, ClassRegistry, ImageMeta, Manifest};
