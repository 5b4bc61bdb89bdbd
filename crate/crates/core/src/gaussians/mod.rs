//! Gaussian attribute storage, activations, covariance and radiance.
//!
//! A [`GaussianSet`] holds one entity (the body or a single garment) as flat
//! attribute arrays. Raw parameters are what the optimizer sees; activated
//! values are derived on demand:
//!
//! | attribute        | raw                   | activated                      |
//! |------------------|-----------------------|--------------------------------|
//! | rotation         | quaternion `[w,x,y,z]`| normalized quaternion          |
//! | scale            | log-meters            | `exp(raw)`                     |
//! | opacity          | logit                 | `sigmoid(raw)`                 |
//! | radiance         | SH coefficients       | `max(0, sh(dir) + 0.5)`        |

mod densify;
mod posed;
pub mod sh;

pub use densify::{densify_and_prune, DensifyOutcome, DensifyStats, DensifyThresholds};
pub use posed::{PosedGaussians, PosedGrads};

use crate::error::{Error, Result};
use crate::math::{self, Mat3, Quat, Vec3};

pub const DEFAULT_ENTITY: &str = "entity0";

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianSet {
    pub entity: String,
    pub sh_degree: usize,
    /// `N x 3`
    pub means: Vec<f64>,
    /// `N x 4`, `[w, x, y, z]`
    pub quats: Vec<f64>,
    /// `N x 3`
    pub log_scales: Vec<f64>,
    /// `N`
    pub opacity_logits: Vec<f64>,
    /// `N x K x 3` with `K = (L+1)^2`, coefficient-major then channel.
    pub sh: Vec<f64>,
}

#[inline]
pub fn sh_coeff_count(degree: usize) -> usize {
    (degree + 1) * (degree + 1)
}

impl GaussianSet {
    pub fn empty(entity: impl Into<String>, sh_degree: usize) -> Self {
        let entity = entity.into();
        Self {
            entity: if entity.is_empty() { DEFAULT_ENTITY.to_string() } else { entity },
            sh_degree,
            means: Vec::new(),
            quats: Vec::new(),
            log_scales: Vec::new(),
            opacity_logits: Vec::new(),
            sh: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.opacity_logits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.opacity_logits.is_empty()
    }

    pub fn sh_stride(&self) -> usize {
        3 * sh_coeff_count(self.sh_degree)
    }

    pub fn push(&mut self, mean: Vec3, quat: Quat, log_scale: Vec3, opacity_logit: f64, sh: &[f64]) {
        debug_assert_eq!(sh.len(), self.sh_stride());
        self.means.extend_from_slice(mean.as_slice());
        self.quats.extend_from_slice(quat.as_slice());
        self.log_scales.extend_from_slice(log_scale.as_slice());
        self.opacity_logits.push(opacity_logit);
        self.sh.extend_from_slice(sh);
    }

    /// Appends a copy of Gaussian `i` of `other`.
    pub fn push_from(&mut self, other: &GaussianSet, i: usize) {
        self.push(other.mean(i), other.raw_quat(i), other.log_scale(i), other.opacity_logits[i], other.sh_row(i));
    }

    #[inline]
    pub fn mean(&self, i: usize) -> Vec3 {
        math::vec3(&self.means[3 * i..])
    }

    #[inline]
    pub fn set_mean(&mut self, i: usize, v: &Vec3) {
        self.means[3 * i..3 * i + 3].copy_from_slice(v.as_slice());
    }

    #[inline]
    pub fn raw_quat(&self, i: usize) -> Quat {
        math::quat(&self.quats[4 * i..])
    }

    pub fn rotation(&self, i: usize) -> Mat3 {
        math::raw_quat_to_mat(&self.raw_quat(i)).0
    }

    #[inline]
    pub fn log_scale(&self, i: usize) -> Vec3 {
        math::vec3(&self.log_scales[3 * i..])
    }

    pub fn scale(&self, i: usize) -> Vec3 {
        self.log_scale(i).map(f64::exp)
    }

    pub fn opacity(&self, i: usize) -> f64 {
        math::sigmoid(self.opacity_logits[i])
    }

    #[inline]
    pub fn sh_row(&self, i: usize) -> &[f64] {
        let s = self.sh_stride();
        &self.sh[s * i..s * (i + 1)]
    }

    #[inline]
    pub fn sh_row_mut(&mut self, i: usize) -> &mut [f64] {
        let s = self.sh_stride();
        &mut self.sh[s * i..s * (i + 1)]
    }

    pub fn covariance(&self, i: usize) -> Mat3 {
        math::covariance_from(&self.rotation(i), &self.scale(i))
    }

    /// Renormalizes every stored quaternion to unit length.
    pub fn normalize_quats(&mut self) {
        for q in self.quats.chunks_exact_mut(4) {
            let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
            if n > 0.0 {
                q.iter_mut().for_each(|c| *c /= n);
            } else {
                q.copy_from_slice(&math::IDENTITY_QUAT);
            }
        }
    }

    /// Checks array lengths and finiteness.
    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        let stride = self.sh_stride();
        if self.means.len() != 3 * n
            || self.quats.len() != 4 * n
            || self.log_scales.len() != 3 * n
            || self.sh.len() != stride * n
        {
            return Err(Error::dim(format!(
                "entity `{}`: attribute arrays disagree on Gaussian count {n}",
                self.entity
            )));
        }
        let check = |what: &'static str, data: &[f64], width: usize| -> Result<()> {
            match data.iter().position(|v| !v.is_finite()) {
                Some(p) => Err(Error::NonFinite { what, index: p / width }),
                None => Ok(()),
            }
        };
        check("mean", &self.means, 3)?;
        check("quaternion", &self.quats, 4)?;
        check("log-scale", &self.log_scales, 3)?;
        check("opacity", &self.opacity_logits, 1)?;
        check("radiance coefficient", &self.sh, stride)?;
        Ok(())
    }

    /// Copy restricted to the given indices, in order.
    pub fn select(&self, indices: &[usize]) -> GaussianSet {
        let mut out = GaussianSet::empty(self.entity.clone(), self.sh_degree);
        for &i in indices {
            out.push_from(self, i);
        }
        out
    }
}

/// Gradients with the same layout as [`GaussianSet`].
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianGrads {
    pub means: Vec<f64>,
    pub quats: Vec<f64>,
    pub log_scales: Vec<f64>,
    pub opacity_logits: Vec<f64>,
    pub sh: Vec<f64>,
}

impl GaussianGrads {
    pub fn zeros_like(set: &GaussianSet) -> Self {
        Self {
            means: vec![0.0; set.means.len()],
            quats: vec![0.0; set.quats.len()],
            log_scales: vec![0.0; set.log_scales.len()],
            opacity_logits: vec![0.0; set.opacity_logits.len()],
            sh: vec![0.0; set.sh.len()],
        }
    }

    pub fn add_assign(&mut self, other: &GaussianGrads) {
        fn add(a: &mut [f64], b: &[f64]) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        add(&mut self.means, &other.means);
        add(&mut self.quats, &other.quats);
        add(&mut self.log_scales, &other.log_scales);
        add(&mut self.opacity_logits, &other.opacity_logits);
        add(&mut self.sh, &other.sh);
    }

    pub fn scale(&mut self, k: f64) {
        for v in [&mut self.means, &mut self.quats, &mut self.log_scales, &mut self.opacity_logits, &mut self.sh] {
            v.iter_mut().for_each(|x| *x *= k);
        }
    }

    pub fn is_zero(&self) -> bool {
        [&self.means, &self.quats, &self.log_scales, &self.opacity_logits, &self.sh]
            .iter()
            .all(|v| v.iter().all(|x| *x == 0.0))
    }
}

/// Covariance `R diag(s)^2 R^T` of a quaternion and positive scale.
///
/// Fails when the quaternion is further than `1e-6` from unit length.
pub fn covariance(q: &Quat, s: &Vec3) -> Result<Mat3> {
    let n = q.norm();
    if (n - 1.0).abs() > 1e-6 {
        return Err(Error::invalid(format!("quaternion norm {n} is not unit")));
    }
    if s.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::invalid("scale must be positive"));
    }
    Ok(math::covariance_from(&math::quat_to_mat(q), s))
}
