use crate::error::{Error, Result};
use crate::math::{self, Mat3, Mat4, Vec3};

/// Pinhole camera. Camera frame: x right, y down, z forward.
#[derive(Clone, Debug, PartialEq)]
pub struct Camera {
    /// Rigid world-to-camera transform.
    pub world_to_cam: Mat4,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub near: f64,
}

impl Camera {
    pub fn new(world_to_cam: Mat4, intrinsics: [f64; 4], width: usize, height: usize, near: f64) -> Result<Self> {
        let [fx, fy, cx, cy] = intrinsics;
        let cam = Self { world_to_cam, fx, fy, cx, cy, width, height, near };
        cam.validate()?;
        Ok(cam)
    }

    /// Camera at `eye` looking at `target`; `up` fixes the roll.
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3, focal: f64, width: usize, height: usize) -> Result<Self> {
        let z = (target - eye).try_normalize(1e-12).ok_or_else(|| Error::invalid("eye and target coincide"))?;
        let x = (-up).cross(&z).try_normalize(1e-12).ok_or_else(|| Error::invalid("up is parallel to view"))?;
        let y = z.cross(&x);
        let rot = Mat3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
        let world_to_cam = math::rigid(&rot, &(-(rot * eye)));
        Self::new(world_to_cam, [focal, focal, width as f64 / 2.0, height as f64 / 2.0], width, height, 0.01)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("camera has a zero image dimension"));
        }
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::invalid("focal lengths must be positive"));
        }
        if !(self.near > 0.0) {
            return Err(Error::invalid("near plane must be positive"));
        }
        if !self.world_to_cam.iter().all(|v| v.is_finite()) || !math::is_rotation(&self.rotation(), 1e-6) {
            return Err(Error::invalid("extrinsic is not a rigid transform"));
        }
        Ok(())
    }

    pub fn rotation(&self) -> Mat3 {
        math::rot_part(&self.world_to_cam)
    }

    pub fn translation(&self) -> Vec3 {
        math::trans_part(&self.world_to_cam)
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vec3 {
        -(self.rotation().transpose() * self.translation())
    }

    pub fn to_camera(&self, p: &Vec3) -> Vec3 {
        self.rotation() * p + self.translation()
    }

    /// Pixel coordinates and depth, or `None` when at or behind the near
    /// plane. Pixel `(i, j)` has its center at `(i, j)`.
    pub fn project(&self, p: &Vec3) -> Option<([f64; 2], f64)> {
        let c = self.to_camera(p);
        if c.z <= self.near {
            return None;
        }
        Some(([self.fx * c.x / c.z + self.cx, self.fy * c.y / c.z + self.cy], c.z))
    }

    /// Same intrinsics at a different resolution.
    pub fn resized(&self, width: usize, height: usize) -> Self {
        let sx = width as f64 / self.width as f64;
        let sy = height as f64 / self.height as f64;
        Self { fx: self.fx * sx, fy: self.fy * sy, cx: self.cx * sx, cy: self.cy * sy, width, height, ..self.clone() }
    }
}
