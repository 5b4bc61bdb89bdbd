use std::ops::Range;

use super::{GaussianGrads, GaussianSet};
use crate::math::{self, Mat3, Vec3};

/// Gaussians placed in an observation space, ready for splatting.
///
/// `dir_rots` orients the radiance lookup and may be a non-orthonormal
/// blended matrix; `cov_rots` is always a proper rotation and builds the
/// covariance. Several entities can share one scene: `entity` indexes into
/// `entity_names`.
#[derive(Clone, Debug, Default)]
pub struct PosedGaussians {
    pub sh_degree: usize,
    pub means: Vec<Vec3>,
    pub dir_rots: Vec<Mat3>,
    pub cov_rots: Vec<Mat3>,
    pub log_scales: Vec<Vec3>,
    pub opacity_logits: Vec<f64>,
    pub sh: Vec<f64>,
    pub entity: Vec<u16>,
    pub entity_names: Vec<String>,
}

impl PosedGaussians {
    /// The set rendered where it stands (no deformation).
    pub fn from_set(set: &GaussianSet) -> Self {
        let n = set.len();
        let rots: Vec<Mat3> = (0..n).map(|i| set.rotation(i)).collect();
        Self {
            sh_degree: set.sh_degree,
            means: (0..n).map(|i| set.mean(i)).collect(),
            dir_rots: rots.clone(),
            cov_rots: rots,
            log_scales: (0..n).map(|i| set.log_scale(i)).collect(),
            opacity_logits: set.opacity_logits.clone(),
            sh: set.sh.clone(),
            entity: vec![0; n],
            entity_names: vec![set.entity.clone()],
        }
    }

    /// Concatenates scenes; entity ids are renumbered in part order.
    ///
    /// Panics if SH degrees differ.
    pub fn concat(parts: &[&PosedGaussians]) -> Self {
        let mut out = PosedGaussians { sh_degree: parts.first().map_or(0, |p| p.sh_degree), ..Default::default() };
        for part in parts {
            assert_eq!(part.sh_degree, out.sh_degree, "cannot mix SH degrees in one scene");
            let base = out.entity_names.len() as u16;
            out.means.extend_from_slice(&part.means);
            out.dir_rots.extend_from_slice(&part.dir_rots);
            out.cov_rots.extend_from_slice(&part.cov_rots);
            out.log_scales.extend_from_slice(&part.log_scales);
            out.opacity_logits.extend_from_slice(&part.opacity_logits);
            out.sh.extend_from_slice(&part.sh);
            out.entity.extend(part.entity.iter().map(|e| e + base));
            out.entity_names.extend(part.entity_names.iter().cloned());
        }
        out
    }

    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }

    pub fn entity_count(&self) -> usize {
        self.entity_names.len()
    }

    pub fn sh_stride(&self) -> usize {
        3 * super::sh_coeff_count(self.sh_degree)
    }

    pub fn sh_row(&self, i: usize) -> &[f64] {
        let s = self.sh_stride();
        &self.sh[s * i..s * (i + 1)]
    }

    pub fn scale(&self, i: usize) -> Vec3 {
        self.log_scales[i].map(f64::exp)
    }

    pub fn opacity(&self, i: usize) -> f64 {
        math::sigmoid(self.opacity_logits[i])
    }

    pub fn covariance(&self, i: usize) -> Mat3 {
        math::covariance_from(&self.cov_rots[i], &self.scale(i))
    }
}

/// Gradients of a scalar w.r.t. every field of [`PosedGaussians`], plus the
/// screen-space statistics that drive densification.
#[derive(Clone, Debug, Default)]
pub struct PosedGrads {
    pub means: Vec<Vec3>,
    pub dir_rots: Vec<Mat3>,
    pub cov_rots: Vec<Mat3>,
    pub log_scales: Vec<Vec3>,
    pub opacity_logits: Vec<f64>,
    pub sh: Vec<f64>,
    /// `|dL/dμ₂d|` in normalized device coordinates.
    pub mean2d_ndc: Vec<f64>,
    /// Whether the Gaussian survived culling.
    pub visible: Vec<bool>,
}

impl PosedGrads {
    pub fn zeros(n: usize, sh_stride: usize) -> Self {
        Self {
            means: vec![Vec3::zeros(); n],
            dir_rots: vec![Mat3::zeros(); n],
            cov_rots: vec![Mat3::zeros(); n],
            log_scales: vec![Vec3::zeros(); n],
            opacity_logits: vec![0.0; n],
            sh: vec![0.0; n * sh_stride],
            mean2d_ndc: vec![0.0; n],
            visible: vec![false; n],
        }
    }

    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }

    /// Sub-range copy, e.g. one entity of a composite scene.
    pub fn slice(&self, range: Range<usize>) -> PosedGrads {
        let stride = if self.is_empty() { 0 } else { self.sh.len() / self.len() };
        PosedGrads {
            means: self.means[range.clone()].to_vec(),
            dir_rots: self.dir_rots[range.clone()].to_vec(),
            cov_rots: self.cov_rots[range.clone()].to_vec(),
            log_scales: self.log_scales[range.clone()].to_vec(),
            opacity_logits: self.opacity_logits[range.clone()].to_vec(),
            sh: self.sh[range.start * stride..range.end * stride].to_vec(),
            mean2d_ndc: self.mean2d_ndc[range.clone()].to_vec(),
            visible: self.visible[range].to_vec(),
        }
    }

    /// Chains through [`PosedGaussians::from_set`] to raw set parameters.
    pub fn to_set_grads(&self, set: &GaussianSet) -> GaussianGrads {
        let mut g = GaussianGrads::zeros_like(set);
        for i in 0..set.len() {
            g.means[3 * i..3 * i + 3].copy_from_slice(self.means[i].as_slice());
            let d_rot = self.dir_rots[i] + self.cov_rots[i];
            let dq = math::raw_quat_backward(&set.raw_quat(i), &d_rot);
            g.quats[4 * i..4 * i + 4].copy_from_slice(dq.as_slice());
            g.log_scales[3 * i..3 * i + 3].copy_from_slice(self.log_scales[i].as_slice());
        }
        g.opacity_logits.copy_from_slice(&self.opacity_logits);
        g.sh.copy_from_slice(&self.sh);
        g
    }
}
