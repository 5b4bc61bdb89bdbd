//! Differentiable tile-based Gaussian rasterizer.
//!
//! Gaussians are projected with the local affine (EWA) approximation, binned
//! into square tiles by the bounding box of their footprint, sorted by depth
//! and composited front to back per pixel. The backward pass replays each
//! pixel back to front from its final transmittance, so no per-pixel
//! contributor lists are stored.

mod backward;
mod camera;
mod forward;

pub use backward::render_backward;
pub use camera::Camera;
pub use forward::{render, RenderCache, RenderOutput};

use nalgebra::{Matrix2, Matrix2x3};
use serde::{Deserialize, Serialize};

use crate::math::{Mat3, Vec3};

/// Rasterizer constants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderSettings {
    pub tile_size: usize,
    /// Mahalanobis radius beyond which a Gaussian does not touch a pixel.
    pub footprint_sigma: f64,
    pub alpha_max: f64,
    /// Compositing stops before transmittance would drop below this.
    pub min_transmittance: f64,
    /// Added to the diagonal of every screen-space covariance (px²).
    pub dilation: f64,
}

impl Default for RenderSettings {
    fn default() -> Self {
        Self { tile_size: 16, footprint_sigma: 3.0, alpha_max: 0.99, min_transmittance: 1e-4, dilation: 0.3 }
    }
}

/// Upstream gradients of a scalar w.r.t. the render outputs. Empty vectors
/// stand for zero gradients.
#[derive(Clone, Debug, Default)]
pub struct RenderGrads {
    /// `H x W x 3`
    pub color: Vec<f64>,
    /// `H x W`
    pub alpha: Vec<f64>,
    /// One `H x W` map per entity.
    pub entity_alpha: Vec<Vec<f64>>,
}

impl RenderGrads {
    pub fn color_only(color: Vec<f64>) -> Self {
        Self { color, ..Default::default() }
    }
}

/// Jacobian of the pinhole map at camera-frame point `p`.
pub fn projection_jacobian(p: &Vec3, fx: f64, fy: f64) -> Matrix2x3<f64> {
    let iz = 1.0 / p.z;
    Matrix2x3::new(fx * iz, 0.0, -fx * p.x * iz * iz, 0.0, fy * iz, -fy * p.y * iz * iz)
}

/// Screen-space covariance `J W Σ Wᵀ Jᵀ + dilation I` of a world-space
/// covariance at world point `mean`. Returns `None` behind the near plane.
pub fn project_covariance(cov: &Mat3, mean: &Vec3, camera: &Camera, dilation: f64) -> Option<Matrix2<f64>> {
    let p = camera.to_camera(mean);
    if p.z <= camera.near {
        return None;
    }
    let m = projection_jacobian(&p, camera.fx, camera.fy) * camera.rotation();
    Some(m * cov * m.transpose() + Matrix2::identity() * dilation)
}
