use nalgebra::Matrix2;
use rayon::prelude::*;

use super::forward::RenderCache;
use super::RenderGrads;
use crate::error::{Error, Result};
use crate::gaussians::{sh, PosedGaussians, PosedGrads};
use crate::math::{self, Mat3, Vec3};

/// Screen-space gradient of one Gaussian.
#[derive(Clone, Copy, Debug, Default)]
struct ScreenGrad {
    uv: [f64; 2],
    conic: [f64; 3],
    opacity: f64,
    color: [f64; 3],
}

impl ScreenGrad {
    fn add(&mut self, o: &ScreenGrad) {
        for k in 0..2 {
            self.uv[k] += o.uv[k];
        }
        for k in 0..3 {
            self.conic[k] += o.conic[k];
            self.color[k] += o.color[k];
        }
        self.opacity += o.opacity;
    }
}

/// Gradients of a scalar loss w.r.t. every posed Gaussian attribute, given
/// its gradients w.r.t. the rendered color and alpha maps.
pub fn render_backward(scene: &PosedGaussians, cache: &RenderCache, upstream: &RenderGrads) -> Result<PosedGrads> {
    let n = scene.len();
    if cache.gaussian_count() != n || cache.entity_count != scene.entity_count() {
        return Err(Error::dim("render cache does not match the scene"));
    }
    let cam = &cache.camera;
    let (w, h) = (cam.width, cam.height);
    let np = w * h;
    let check = |len: usize, expect: usize, what: &str| -> Result<()> {
        if len != 0 && len != expect {
            return Err(Error::dim(format!("{what} gradient has {len} values, expected {expect}")));
        }
        Ok(())
    };
    check(upstream.color.len(), 3 * np, "color")?;
    check(upstream.alpha.len(), np, "alpha")?;
    if upstream.entity_alpha.len() > cache.entity_count {
        return Err(Error::dim("more entity-alpha gradients than entities"));
    }
    for g in &upstream.entity_alpha {
        check(g.len(), np, "entity alpha")?;
    }

    let settings = &cache.settings;
    let fp2 = settings.footprint_sigma * settings.footprint_sigma;
    let bg = cache.background;
    let ne = cache.entity_count;

    let tile_grads: Vec<Vec<ScreenGrad>> = (0..cache.tiles.len())
        .into_par_iter()
        .map(|t| {
            let (x0, y0, x1, y1) = cache.tile_rect(t);
            let splats = cache.splats(scene, t);
            let mut grads = vec![ScreenGrad::default(); splats.len()];
            let mut g_ent = vec![0.0; ne];
            for y in y0..y1 {
                for x in x0..x1 {
                    let q = y * w + x;
                    let last = cache.last[q] as usize;
                    if last == 0 {
                        continue;
                    }
                    let gc = if upstream.color.is_empty() {
                        [0.0; 3]
                    } else {
                        [upstream.color[3 * q], upstream.color[3 * q + 1], upstream.color[3 * q + 2]]
                    };
                    let ga = if upstream.alpha.is_empty() { 0.0 } else { upstream.alpha[q] };
                    for e in 0..ne {
                        g_ent[e] = ga + upstream.entity_alpha.get(e).filter(|g| !g.is_empty()).map_or(0.0, |g| g[q]);
                    }
                    if gc == [0.0; 3] && g_ent.iter().all(|g| *g == 0.0) {
                        continue;
                    }
                    let (px, py) = (x as f64, y as f64);
                    let mut t_ = cache.final_t[q];
                    let mut acc = (gc[0] * bg[0] + gc[1] * bg[1] + gc[2] * bg[2]) * t_;
                    for k in (0..last).rev() {
                        let s = &splats[k];
                        let (d2, dx, dy) = s.mahalanobis(px, py);
                        if d2 > fp2 {
                            continue;
                        }
                        let gauss = (-0.5 * d2).exp();
                        let raw = s.opacity * gauss;
                        let alpha = raw.min(settings.alpha_max);
                        let t_before = t_ / (1.0 - alpha);
                        let weight = gc[0] * s.color[0] + gc[1] * s.color[1] + gc[2] * s.color[2] + g_ent[s.entity as usize];
                        let d_alpha = weight * t_before - acc / (1.0 - alpha);
                        acc += weight * alpha * t_before;
                        t_ = t_before;

                        let g = &mut grads[k];
                        let at = alpha * t_before;
                        for c in 0..3 {
                            g.color[c] += gc[c] * at;
                        }
                        if raw < settings.alpha_max {
                            g.opacity += d_alpha * gauss;
                            let d_d2 = -0.5 * d_alpha * raw;
                            g.conic[0] += d_d2 * dx * dx;
                            g.conic[1] += d_d2 * 2.0 * dx * dy;
                            g.conic[2] += d_d2 * dy * dy;
                            g.uv[0] -= d_d2 * 2.0 * (s.a * dx + s.b * dy);
                            g.uv[1] -= d_d2 * 2.0 * (s.b * dx + s.c * dy);
                        }
                    }
                }
            }
            grads
        })
        .collect();

    let mut screen = vec![ScreenGrad::default(); n];
    for (t, grads) in tile_grads.iter().enumerate() {
        for (k, g) in grads.iter().enumerate() {
            screen[cache.tiles[t][k] as usize].add(g);
        }
    }

    let stride = scene.sh_stride();
    let rot_w = cam.rotation();
    let per: Vec<Option<PerGaussian>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let p = &cache.projected[i];
            if !p.visible {
                return None;
            }
            let sg = &screen[i];
            let mut d_mean = Vec3::zeros();

            // Radiance.
            let mut d_col = sg.color;
            for c in 0..3 {
                if p.color_raw[c] < 0.0 {
                    d_col[c] = 0.0;
                }
            }
            let coeffs = scene.sh_row(i);
            let k = stride / 3;
            let local = scene.dir_rots[i].transpose() * p.view_dir;
            let mut basis = [0.0; 16];
            let mut basis_grad = [Vec3::zeros(); 16];
            sh::basis(&local, &mut basis[..k]);
            sh::basis_grad(&local, &mut basis_grad[..k]);
            let mut d_sh = vec![0.0; stride];
            let mut d_local = Vec3::zeros();
            for j in 0..k {
                let mut s = 0.0;
                for c in 0..3 {
                    d_sh[3 * j + c] = basis[j] * d_col[c];
                    s += d_col[c] * coeffs[3 * j + c];
                }
                d_local += basis_grad[j] * s;
            }
            let d_dir_rot = p.view_dir * d_local.transpose();
            let d_dir = scene.dir_rots[i] * d_local;
            d_mean += (d_dir - p.view_dir * p.view_dir.dot(&d_dir)) / p.view_dist;

            // Opacity.
            let d_logit = sg.opacity * p.opacity * (1.0 - p.opacity);

            // Conic -> screen covariance -> 3D covariance and Jacobian.
            let q = Matrix2::new(p.conic[0], p.conic[1], p.conic[1], p.conic[2]);
            let gq = Matrix2::new(sg.conic[0], 0.5 * sg.conic[1], 0.5 * sg.conic[1], sg.conic[2]);
            let g2 = -(q * gq * q);
            let d_cov3 = p.jw.transpose() * g2 * p.jw;
            let d_jw = g2 * p.jw * p.cov3d * 2.0;
            let d_j = d_jw * rot_w.transpose();

            let (fx, fy) = (cam.fx, cam.fy);
            let c = p.cam;
            let iz = 1.0 / c.z;
            let iz2 = iz * iz;
            let mut d_cam = Vec3::new(
                -fx * iz2 * d_j[(0, 2)],
                -fy * iz2 * d_j[(1, 2)],
                -fx * iz2 * d_j[(0, 0)] + 2.0 * fx * c.x * iz2 * iz * d_j[(0, 2)] - fy * iz2 * d_j[(1, 1)]
                    + 2.0 * fy * c.y * iz2 * iz * d_j[(1, 2)],
            );
            d_cam.x += sg.uv[0] * fx * iz;
            d_cam.y += sg.uv[1] * fy * iz;
            d_cam.z -= sg.uv[0] * fx * c.x * iz2 + sg.uv[1] * fy * c.y * iz2;
            d_mean += rot_w.transpose() * d_cam;

            let scale = scene.scale(i);
            let (d_cov_rot, d_scale) = math::covariance_backward(&scene.cov_rots[i], &scale, &d_cov3);
            let ndc = ((sg.uv[0] * w as f64 * 0.5).powi(2) + (sg.uv[1] * h as f64 * 0.5).powi(2)).sqrt();
            Some(PerGaussian {
                mean: d_mean,
                dir_rot: d_dir_rot,
                cov_rot: d_cov_rot,
                log_scale: d_scale.component_mul(&scale),
                opacity_logit: d_logit,
                sh: d_sh,
                ndc,
            })
        })
        .collect();

    let mut out = PosedGrads::zeros(n, stride);
    for (i, g) in per.into_iter().enumerate() {
        if let Some(g) = g {
            out.means[i] = g.mean;
            out.dir_rots[i] = g.dir_rot;
            out.cov_rots[i] = g.cov_rot;
            out.log_scales[i] = g.log_scale;
            out.opacity_logits[i] = g.opacity_logit;
            out.sh[stride * i..stride * (i + 1)].copy_from_slice(&g.sh);
            out.mean2d_ndc[i] = g.ndc;
            out.visible[i] = true;
        }
    }
    Ok(out)
}

struct PerGaussian {
    mean: Vec3,
    dir_rot: Mat3,
    cov_rot: Mat3,
    log_scale: Vec3,
    opacity_logit: f64,
    sh: Vec<f64>,
    ndc: f64,
}

#[cfg(test)]
mod tests {
    use super::super::{render, Camera, RenderSettings};
    use super::*;
    use crate::gaussians::GaussianSet;
    use crate::math::{Mat4, Quat};
    use approx::assert_relative_eq;

    fn one_gaussian(logit: f64) -> PosedGaussians {
        let mut set = GaussianSet::empty("body", 0);
        set.push(
            Vec3::new(0.01, -0.02, 2.0),
            Quat::new(1.0, 0.0, 0.0, 0.0),
            Vec3::repeat(0.03f64.ln()),
            logit,
            &[0.4, 0.1, -0.3],
        );
        PosedGaussians::from_set(&set)
    }

    fn cam() -> Camera {
        Camera::new(Mat4::identity(), [100.0, 100.0, 12.0, 12.0], 24, 24, 0.01).unwrap()
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let scene = one_gaussian(0.3);
        let (_, cache) = render(&scene, &cam(), [0.1; 3], &RenderSettings::default()).unwrap();
        let g = render_backward(&scene, &cache, &RenderGrads::color_only(vec![0.0; 24 * 24 * 3])).unwrap();
        assert!(g.means[0] == Vec3::zeros() && g.opacity_logits[0] == 0.0 && g.sh.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn single_term_opacity_derivative() {
        let logit = 0.3;
        let scene = one_gaussian(logit);
        let bg = [0.1, 0.2, 0.3];
        let (out, cache) = render(&scene, &cam(), bg, &RenderSettings::default()).unwrap();
        let (x, y) = (12usize, 11usize);
        let mut up = vec![0.0; 24 * 24 * 3];
        up[3 * (y * 24 + x)] = 1.0;
        let g = render_backward(&scene, &cache, &RenderGrads::color_only(up)).unwrap();
        // pixel red = η G c + (1 - η G) bg, so ∂/∂η_raw = G (c - bg) η (1 - η).
        let eta = math::sigmoid(logit);
        let p = &cache.projected[0];
        let (dx, dy) = (x as f64 - p.uv[0], y as f64 - p.uv[1]);
        let gauss = (-0.5 * (p.conic[0] * dx * dx + 2.0 * p.conic[1] * dx * dy + p.conic[2] * dy * dy)).exp();
        let c = p.color()[0];
        assert_relative_eq!(g.opacity_logits[0], gauss * (c - bg[0]) * eta * (1.0 - eta), epsilon = 1e-12);
        assert!(out.color.at(x, y, 0) > 0.0);
    }
}
