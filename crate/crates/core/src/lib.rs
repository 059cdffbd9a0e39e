//! Per-scene fusion of a rectified stereo pair with sparse, possibly corrupted
//! Lidar: a classical stereo initializer, a Verify/Update loop that discards
//! Lidar points inconsistent with the current estimate, and a variational
//! solver over both disparity fields.

// Negated comparisons reject NaN together with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data_io;
pub mod energy;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod grid;
pub mod image_ops;
pub mod pipeline;
pub mod segmentation;

pub use error::{Error, Result};
pub use geometry::{DenseDisparityField, Side, SparseDisparityMap, D_MAX};
pub use grid::Grid;
