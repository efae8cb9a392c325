//! Point-grid RGB-D place recognition toolkit.
//!
//! Generates synthetic indoor datasets organized around a regular grid of
//! capture points, localizes query frames with a retrieval, feature
//! matching and 3D registration pipeline, and scores the results with
//! recall at translation/rotation thresholds.

pub mod dataset;
pub mod error;
pub mod eval;
pub mod features;
pub mod geometry;
pub mod pipeline;
pub mod raster;
pub mod registration;
pub mod retrieval;
pub mod rng;
pub mod scene;

pub use error::{Error, Result};
