//! Multi-level semantic communication for 3D point clouds.

pub mod channel;
pub mod codec;
pub mod dataset_io;
pub mod error;
pub mod geometry;
pub mod metrics;
pub mod nn;
pub mod pipeline;

pub use error::{Error, Result};
pub use geometry::{PatchSet, Point, PointCloud};
