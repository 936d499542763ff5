//! Post-processing, layering, benchmark composition and evaluation for
//! instance segmentation of raster scene sketches.
//!
//! Detections, candidate masks and depth maps come from external models.
//! This crate cleans and filters them, resolves overlaps by depth, completes
//! coverage of the ink with a marker flood, splits the result into
//! depth-ordered layers, and scores predictions against ground truth.

pub mod depth;
pub mod detection;
pub mod error;
pub mod eval;
pub mod inpaint;
pub mod io;
pub mod layering;
pub mod pipeline;
pub mod raster;
pub mod rect;
pub mod rle;
pub mod scene;
pub mod service;

pub use error::{Error, Result};
