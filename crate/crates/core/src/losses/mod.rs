//! Training objectives, each returning its value and analytic gradients.

mod collision;
mod greg;
mod image;
mod iso;
pub mod ssim;

pub use collision::{clearances, collision_loss, collision_term, CollisionGrads};
pub use greg::{gaussian_reg_loss, RegGrads};
pub use image::{mask_loss, recon_l1};
pub use iso::{iso_loss, IsoGrads};
pub use ssim::{s3im, ssim, S3imParams, SsimParams};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Loss term weights and their internal parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub mask: f64,
    pub s3im: f64,
    pub reg: f64,
    pub iso: f64,
    pub collision: f64,
    pub iso_mu: f64,
    pub iso_sigma: f64,
    pub reg_weights: f64,
    pub reg_scale: f64,
    /// Collision margin (meters).
    pub collision_margin: f64,
    /// Body vertices whose nearest garment point is farther than this
    /// (meters) are left out of the collision term, so regions a garment
    /// does not cover add nothing. Absent: every vertex counts.
    pub collision_radius: Option<f64>,
    pub s3im_patch: usize,
    pub s3im_kernel: usize,
    pub s3im_stride: usize,
    pub s3im_repeats: usize,
    /// Neighbours per Gaussian for the regularizers (excluding itself).
    pub knn: usize,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            mask: 0.1,
            s3im: 0.2,
            reg: 0.01,
            iso: 0.1,
            collision: 1.0,
            iso_mu: 1.0,
            iso_sigma: 0.1,
            reg_weights: 0.01,
            reg_scale: 0.01,
            collision_margin: 0.0,
            collision_radius: Some(0.04),
            s3im_patch: 64,
            s3im_kernel: 11,
            s3im_stride: 1,
            s3im_repeats: 10,
            knn: 5,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let lambdas = [
            self.mask,
            self.s3im,
            self.reg,
            self.iso,
            self.collision,
            self.iso_mu,
            self.iso_sigma,
            self.reg_weights,
            self.reg_scale,
        ];
        if lambdas.iter().any(|l| !(*l >= 0.0) || !l.is_finite()) {
            return Err(Error::invalid("loss weights must be finite and non-negative"));
        }
        if self.s3im_kernel == 0 || self.s3im_kernel > self.s3im_patch {
            return Err(Error::invalid("S3IM kernel must be in 1..=patch"));
        }
        if self.s3im_repeats == 0 || self.s3im_stride == 0 {
            return Err(Error::invalid("S3IM repeats and stride must be at least 1"));
        }
        if self.knn == 0 {
            return Err(Error::invalid("neighbourhood size must be at least 1"));
        }
        if !self.collision_margin.is_finite() || self.collision_radius.is_some_and(|r| !(r > 0.0)) {
            return Err(Error::invalid("collision margin must be finite and radius positive"));
        }
        Ok(())
    }

    pub fn s3im_params(&self) -> S3imParams {
        S3imParams { patch: self.s3im_patch, kernel: self.s3im_kernel, stride: self.s3im_stride, repeats: self.s3im_repeats }
    }
}

/// Per-term values of one training step.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub recon: f64,
    pub mask: f64,
    pub s3im: f64,
    pub reg: f64,
    pub iso: f64,
    pub collision: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn add(&mut self, o: &LossBreakdown) {
        self.recon += o.recon;
        self.mask += o.mask;
        self.s3im += o.s3im;
        self.reg += o.reg;
        self.iso += o.iso;
        self.collision += o.collision;
        self.total += o.total;
    }
}

/// `recon + λ₂ mask + λ₃ S3IM + λ₄ reg` summed over independently supervised
/// entities.
pub fn total_isolation(per_entity: &[LossBreakdown], w: &LossWeights) -> LossBreakdown {
    let mut out = LossBreakdown::default();
    for e in per_entity {
        let mut e = e.clone();
        e.iso = 0.0;
        e.collision = 0.0;
        e.total = e.recon + w.mask * e.mask + w.s3im * e.s3im + w.reg * e.reg;
        out.add(&e);
    }
    out
}

/// `recon + λ₂ mask + λ₃ S3IM + λ₄ reg + λ₅ iso + λ₆ collision` on the
/// composite render.
pub fn total_joint(l: &LossBreakdown, w: &LossWeights) -> LossBreakdown {
    let mut out = l.clone();
    out.total = l.recon + w.mask * l.mask + w.s3im * l.s3im + w.reg * l.reg + w.iso * l.iso + w.collision * l.collision;
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn totals_weight_each_term() {
        let w = LossWeights::default();
        let l = LossBreakdown { recon: 1.0, mask: 2.0, s3im: 3.0, reg: 4.0, iso: 5.0, collision: 6.0, total: 0.0 };
        let iso = total_isolation(&[l.clone(), l.clone()], &w);
        assert!((iso.total - 2.0 * (1.0 + 0.2 + 0.6 + 0.04)).abs() < 1e-12);
        let j = total_joint(&l, &w);
        assert!((j.total - (1.0 + 0.2 + 0.6 + 0.04 + 0.5 + 6.0)).abs() < 1e-12);
    }

    #[test]
    fn validation() {
        assert!(LossWeights::default().validate().is_ok());
        assert!(LossWeights { mask: -1.0, ..Default::default() }.validate().is_err());
        assert!(LossWeights { s3im_kernel: 80, ..Default::default() }.validate().is_err());
        assert!(LossWeights { knn: 0, ..Default::default() }.validate().is_err());
    }
}
