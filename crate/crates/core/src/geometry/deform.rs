use nalgebra::SymmetricEigen;
use rayon::prelude::*;

use super::{BoneTransforms, SkinningWeights};
use crate::error::{Error, Result};
use crate::gaussians::{GaussianGrads, GaussianSet, PosedGaussians, PosedGrads};
use crate::math::{self, Mat3, Vec3};

/// Per-Gaussian blended transform and its polar factors, kept for the
/// backward pass.
#[derive(Clone, Debug, Default)]
pub struct DeformCache {
    pub linear: Vec<Mat3>,
    pub polar: Vec<Polar>,
}

impl DeformCache {
    pub fn len(&self) -> usize {
        self.linear.len()
    }

    pub fn is_empty(&self) -> bool {
        self.linear.is_empty()
    }
}

/// `A = U P` with `P = V diag(σ) Vᵀ`.
#[derive(Clone, Copy, Debug)]
pub struct Polar {
    pub u: Mat3,
    pub v: Mat3,
    pub sigma: Vec3,
}

/// Rotation factor of the polar decomposition of `a`. Fails when `a` is
/// singular or orientation-reversing.
pub fn polar_rotation(a: &Mat3) -> Option<Polar> {
    if !a.iter().all(|x| x.is_finite()) || a.determinant() <= 0.0 {
        return None;
    }
    let eig = SymmetricEigen::new(a.transpose() * a);
    let sigma = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    let (lo, hi) = (sigma.min(), sigma.max());
    if !(lo > 1e-9 * hi) {
        return None;
    }
    let v = eig.eigenvectors;
    let inv = Mat3::from_diagonal(&sigma.map(|s| 1.0 / s));
    let u = a * v * inv * v.transpose();
    Some(Polar { u, v, sigma })
}

/// Gradient w.r.t. `A` of a scalar depending on `A` only through its polar
/// rotation `U`, given `dL/dU`.
pub fn polar_backward(p: &Polar, d_u: &Mat3) -> Mat3 {
    let z = p.v.transpose() * (p.u.transpose() * d_u) * p.v;
    let s = p.sigma;
    let y = Mat3::from_fn(|i, j| (z[(i, j)] - z[(j, i)]) / (s[i] + s[j]));
    p.u * p.v * y * p.v.transpose()
}

fn blend(weights: &[f64], bones: &BoneTransforms) -> (Mat3, Vec3) {
    let mut a = Mat3::zeros();
    let mut t = Vec3::zeros();
    for (w, b) in weights.iter().zip(&bones.transforms) {
        a += math::rot_part(b) * *w;
        t += math::trans_part(b) * *w;
    }
    (a, t)
}

fn check_sizes(n: usize, weights: &SkinningWeights, bones: &BoneTransforms) -> Result<()> {
    if weights.len() != n {
        return Err(Error::dim(format!("skinning weights cover {} Gaussians, set has {n}", weights.len())));
    }
    if weights.joints != bones.len() {
        return Err(Error::dim(format!("weights span {} joints, {} bone transforms given", weights.joints, bones.len())));
    }
    Ok(())
}

/// Linear blend skinning of a canonical set into observation space.
///
/// Positions become `A μ + t` with `(A, t) = Σ_k W̃_k B_k`. The radiance frame
/// is `A R` as-is; the covariance frame is the polar rotation of `A` applied
/// to `R`. Scale, opacity and radiance coefficients carry over unchanged.
pub fn deform_gaussians(
    set: &GaussianSet,
    weights: &SkinningWeights,
    bones: &BoneTransforms,
) -> Result<(PosedGaussians, DeformCache)> {
    let n = set.len();
    check_sizes(n, weights, bones)?;
    let per: Vec<Result<(Vec3, Mat3, Mat3, Mat3, Polar)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let (a, t) = blend(&weights.effective(i), bones);
            let polar = polar_rotation(&a).ok_or(Error::NonFinite { what: "blended transform", index: i })?;
            if !t.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite { what: "blended transform", index: i });
            }
            let r = set.rotation(i);
            Ok((a * set.mean(i) + t, a * r, polar.u * r, a, polar))
        })
        .collect();
    let mut posed = PosedGaussians {
        sh_degree: set.sh_degree,
        means: Vec::with_capacity(n),
        dir_rots: Vec::with_capacity(n),
        cov_rots: Vec::with_capacity(n),
        log_scales: (0..n).map(|i| set.log_scale(i)).collect(),
        opacity_logits: set.opacity_logits.clone(),
        sh: set.sh.clone(),
        entity: vec![0; n],
        entity_names: vec![set.entity.clone()],
    };
    let mut cache = DeformCache { linear: Vec::with_capacity(n), polar: Vec::with_capacity(n) };
    for r in per {
        let (mu, dir, cov, a, polar) = r?;
        posed.means.push(mu);
        posed.dir_rots.push(dir);
        posed.cov_rots.push(cov);
        cache.linear.push(a);
        cache.polar.push(polar);
    }
    Ok((posed, cache))
}

/// Blends arbitrary points (e.g. template vertices) with the given weights.
pub fn deform_points(points: &[Vec3], weights: &SkinningWeights, bones: &BoneTransforms) -> Result<Vec<Vec3>> {
    check_sizes(points.len(), weights, bones)?;
    Ok(points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let (a, t) = blend(&weights.effective(i), bones);
            a * p + t
        })
        .collect())
}

/// Gradients of [`deform_gaussians`] w.r.t. the canonical set and the
/// skinning deltas.
#[derive(Clone, Debug)]
pub struct DeformGrads {
    pub set: GaussianGrads,
    /// Same layout as [`SkinningWeights::delta`].
    pub delta: Vec<f64>,
}

pub fn deform_backward(
    set: &GaussianSet,
    weights: &SkinningWeights,
    bones: &BoneTransforms,
    cache: &DeformCache,
    upstream: &PosedGrads,
) -> Result<DeformGrads> {
    let n = set.len();
    check_sizes(n, weights, bones)?;
    if cache.len() != n {
        return Err(Error::MissingCache("deformation"));
    }
    if upstream.len() != n {
        return Err(Error::dim(format!("upstream gradients cover {} Gaussians, set has {n}", upstream.len())));
    }
    let k = weights.joints;
    let rows: Vec<(Vec3, [f64; 4], Vec<f64>)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let a = cache.linear[i];
            let polar = &cache.polar[i];
            let raw = set.raw_quat(i);
            let r = math::raw_quat_to_mat(&raw).0;
            let mu = set.mean(i);
            let g_mu = upstream.means[i];
            let g_dir = upstream.dir_rots[i];
            let g_cov = upstream.cov_rots[i];

            let d_mu = a.transpose() * g_mu;
            let d_r = a.transpose() * g_dir + polar.u.transpose() * g_cov;
            let d_a = g_mu * mu.transpose() + g_dir * r.transpose() + polar_backward(polar, &(g_cov * r.transpose()));
            let d_q = math::raw_quat_backward(&raw, &d_r);
            let d_w = bones
                .transforms
                .iter()
                .map(|b| d_a.component_mul(&math::rot_part(b)).sum() + g_mu.dot(&math::trans_part(b)))
                .collect();
            (d_mu, [d_q[0], d_q[1], d_q[2], d_q[3]], d_w)
        })
        .collect();
    let mut set_grads = GaussianGrads::zeros_like(set);
    let mut delta = vec![0.0; n * k];
    for (i, (d_mu, d_q, d_w)) in rows.into_iter().enumerate() {
        set_grads.means[3 * i..3 * i + 3].copy_from_slice(d_mu.as_slice());
        set_grads.quats[4 * i..4 * i + 4].copy_from_slice(&d_q);
        set_grads.log_scales[3 * i..3 * i + 3].copy_from_slice(upstream.log_scales[i].as_slice());
        delta[k * i..k * (i + 1)].copy_from_slice(&d_w);
    }
    set_grads.opacity_logits.copy_from_slice(&upstream.opacity_logits);
    set_grads.sh.copy_from_slice(&upstream.sh);
    Ok(DeformGrads { set: set_grads, delta })
}
