//! Layered articulated Gaussian splatting.
//!
//! A scene is a set of entities (a body and any number of garment layers),
//! each stored as 3D Gaussians in a shared canonical space and posed by
//! linear blend skinning. The crate renders them with a differentiable
//! tile-based rasterizer and fits them to posed images.

pub mod editing;
pub mod error;
pub mod gaussians;
pub mod harness;
pub mod geometry;
pub mod io;
pub mod knn;
pub mod losses;
pub mod math;
pub mod model;
pub mod raster;
pub mod splatting;
pub mod templates;
pub mod training;

pub use error::{Error, Result};
