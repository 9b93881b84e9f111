//! Neural implicit fields learned from multi-view images by volume rendering,
//! with sample coordinates quantized onto a virtual high-resolution grid.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod config;
pub mod encoding;
pub mod error;
pub mod field;
pub mod golden;
pub mod grid;
pub mod io;
pub mod manifest;
pub mod render;
pub mod scene;
pub mod stats;
pub mod surface;
pub mod train;

mod mc_tables;

pub use error::{Error, Result};

/// Scene-space 3-vector.
pub type Vec3 = nalgebra::Vector3<f64>;
