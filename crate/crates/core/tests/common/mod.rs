//! Shared fixtures and reference implementations for integration tests.
#![allow(dead_code)]

use layersplat::gaussians::{sh_coeff_count, GaussianSet, PosedGaussians};
use layersplat::math::{self, Mat3, Mat4, Quat, Vec3};
use layersplat::raster::Image;
use layersplat::splatting::{Camera, RenderSettings};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_rotation(r: &mut ChaCha8Rng) -> Mat3 {
    math::axis_angle_to_mat(&Vec3::from_fn(|_, _| r.random_range(-3.0..3.0)))
}

pub fn random_quat(r: &mut ChaCha8Rng) -> Quat {
    Quat::from_fn(|_, _| r.random_range(-1.0..1.0)).normalize()
}

/// Identity-extrinsic camera looking down +z.
pub fn axis_camera(w: usize, h: usize, focal: f64) -> Camera {
    Camera::new(Mat4::identity(), [focal, focal, w as f64 / 2.0, h as f64 / 2.0], w, h, 0.01).unwrap()
}

/// A slightly rotated and shifted camera so the extrinsic is non-trivial.
pub fn tilted_camera(w: usize, h: usize, focal: f64) -> Camera {
    let rot = math::axis_angle_to_mat(&Vec3::new(0.05, -0.08, 0.03));
    let mut cam = axis_camera(w, h, focal);
    cam.world_to_cam = math::rigid(&rot, &Vec3::new(0.05, -0.03, 0.1));
    cam
}

/// Random posed scene in front of [`axis_camera`]: moderate opacities, radiance
/// away from the clamp, two entities, arbitrary (non-orthonormal) radiance
/// frames.
pub fn random_scene(seed: u64, n: usize, sh_degree: usize, spread: f64, scale: (f64, f64)) -> PosedGaussians {
    let mut r = rng(seed);
    let k = sh_coeff_count(sh_degree);
    let mut scene = PosedGaussians {
        sh_degree,
        entity_names: vec!["body".into(), "shirt".into()],
        ..Default::default()
    };
    for _ in 0..n {
        let z = r.random_range(2.0..4.0);
        scene.means.push(Vec3::new(r.random_range(-spread..spread) * z / 2.0, r.random_range(-spread..spread) * z / 2.0, z));
        scene.cov_rots.push(random_rotation(&mut r));
        let skew = Mat3::from_fn(|_, _| r.random_range(-0.1..0.1));
        scene.dir_rots.push(random_rotation(&mut r) + skew);
        scene.log_scales.push(Vec3::from_fn(|_, _| r.random_range(scale.0..scale.1).ln()));
        scene.opacity_logits.push(math::logit(r.random_range(0.1..0.7)));
        for j in 0..k {
            for _ in 0..3 {
                let v = if j == 0 { (r.random_range(0.25..0.75) - 0.5) / 0.282_094_791_773_878_14 } else { r.random_range(-0.08..0.08) };
                scene.sh.push(v);
            }
        }
        scene.entity.push(r.random_range(0..2));
    }
    scene
}

/// Settings whose footprint is wide enough that cut-off discontinuities are
/// far below finite-difference resolution, with compositing never stopped
/// early.
pub fn smooth_settings() -> RenderSettings {
    RenderSettings { footprint_sigma: 12.0, min_transmittance: 0.0, ..Default::default() }
}

pub struct OracleOutput {
    pub color: Image,
    pub alpha: Image,
    pub entity_alpha: Vec<Image>,
}

/// Per-pixel renderer over all Gaussians in depth order, written without
/// tiles, caches or shared helpers.
pub fn oracle_render(scene: &PosedGaussians, cam: &Camera, bg: [f64; 3], s: &RenderSettings) -> OracleOutput {
    let n = scene.means.len();
    let rot = math::rot_part(&cam.world_to_cam);
    let tr = math::trans_part(&cam.world_to_cam);
    let center = -(rot.transpose() * tr);
    struct G {
        u: f64,
        v: f64,
        inv: [f64; 3],
        op: f64,
        col: [f64; 3],
        z: f64,
        e: usize,
        idx: usize,
    }
    let mut gs = Vec::new();
    for i in 0..n {
        let p = rot * scene.means[i] + tr;
        if p.z <= cam.near {
            continue;
        }
        let j = nalgebra::Matrix2x3::new(cam.fx / p.z, 0.0, -cam.fx * p.x / (p.z * p.z), 0.0, cam.fy / p.z, -cam.fy * p.y / (p.z * p.z));
        let sc = scene.log_scales[i].map(f64::exp);
        let rs = scene.cov_rots[i] * Mat3::from_diagonal(&sc);
        let cov = rs * rs.transpose();
        let m = j * rot;
        let c2 = m * cov * m.transpose();
        let (a, b, c) = (c2[(0, 0)] + s.dilation, c2[(0, 1)], c2[(1, 1)] + s.dilation);
        let det = a * c - b * b;
        if det <= 0.0 {
            continue;
        }
        let d = (scene.means[i] - center).normalize();
        let l = scene.dir_rots[i].transpose() * d;
        let k = scene.sh.len() / (3 * n);
        let row = &scene.sh[3 * k * i..3 * k * (i + 1)];
        let basis = sh_basis_reference(&l, k);
        let mut col = [0.5; 3];
        for (jj, bj) in basis.iter().enumerate() {
            for ch in 0..3 {
                col[ch] += bj * row[3 * jj + ch];
            }
        }
        gs.push(G {
            u: cam.fx * p.x / p.z + cam.cx,
            v: cam.fy * p.y / p.z + cam.cy,
            inv: [c / det, -b / det, a / det],
            op: 1.0 / (1.0 + (-scene.opacity_logits[i]).exp()),
            col: col.map(|v| v.max(0.0)),
            z: p.z,
            e: scene.entity[i] as usize,
            idx: i,
        });
    }
    gs.sort_by(|x, y| x.z.partial_cmp(&y.z).unwrap().then(x.idx.cmp(&y.idx)));
    let ne = scene.entity_names.len();
    let mut color = Image::new(cam.width, cam.height, 3);
    let mut alpha = Image::new(cam.width, cam.height, 1);
    let mut entity_alpha = vec![Image::new(cam.width, cam.height, 1); ne];
    let fp2 = s.footprint_sigma * s.footprint_sigma;
    for y in 0..cam.height {
        for x in 0..cam.width {
            let mut t = 1.0;
            let mut acc = [0.0; 3];
            for g in &gs {
                let dx = x as f64 - g.u;
                let dy = y as f64 - g.v;
                let d2 = g.inv[0] * dx * dx + 2.0 * g.inv[1] * dx * dy + g.inv[2] * dy * dy;
                if d2 > fp2 {
                    continue;
                }
                let a = (g.op * (-0.5 * d2).exp()).min(s.alpha_max);
                if t * (1.0 - a) < s.min_transmittance {
                    break;
                }
                for ch in 0..3 {
                    acc[ch] += g.col[ch] * a * t;
                }
                *alpha.at_mut(x, y, 0) += a * t;
                *entity_alpha[g.e].at_mut(x, y, 0) += a * t;
                t *= 1.0 - a;
            }
            for ch in 0..3 {
                *color.at_mut(x, y, ch) = acc[ch] + t * bg[ch];
            }
        }
    }
    OracleOutput { color, alpha, entity_alpha }
}

/// Real SH basis written out explicitly up to degree 1 (degree 2 and 3 are
/// covered by the unit tests of the library's own basis).
pub fn sh_basis_reference(d: &Vec3, k: usize) -> Vec<f64> {
    let c0 = 0.5 * (1.0 / std::f64::consts::PI).sqrt();
    let c1 = (3.0 / (4.0 * std::f64::consts::PI)).sqrt();
    let all = [c0, -c1 * d.y, c1 * d.z, -c1 * d.x];
    assert!(k <= 4, "reference basis stops at degree 1");
    all[..k].to_vec()
}

/// Central-difference derivative of `f` w.r.t. each entry of `params`.
pub fn central_differences(params: &mut [f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(params.len());
    for k in 0..params.len() {
        let orig = params[k];
        params[k] = orig + h;
        let fp = f(params);
        params[k] = orig - h;
        let fm = f(params);
        params[k] = orig;
        out.push((fp - fm) / (2.0 * h));
    }
    out
}

/// Largest relative error between analytic and numeric gradients, with the
/// denominator floored at `1e-3` of the largest numeric magnitude so that
/// near-zero entries are judged on an absolute scale.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let scale = numeric.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = (1e-3 * scale).max(1e-12);
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

pub fn random_weights(r: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| r.random_range(-1.0..1.0)).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// A canonical set with the given number of Gaussians near the origin.
pub fn random_set(seed: u64, n: usize, sh_degree: usize) -> GaussianSet {
    let mut r = rng(seed);
    let mut set = GaussianSet::empty("cloth", sh_degree);
    let k = 3 * sh_coeff_count(sh_degree);
    for _ in 0..n {
        let mean = Vec3::from_fn(|_, _| r.random_range(-0.5..0.5));
        let q = random_quat(&mut r);
        let ls = Vec3::from_fn(|_, _| r.random_range(-3.0..-1.5));
        let row: Vec<f64> = (0..k).map(|_| r.random_range(-0.3..0.3)).collect();
        set.push(mean, q, ls, r.random_range(-1.0..1.0), &row);
    }
    set
}

/// Flattens every differentiable field of a posed scene (means, radiance
/// frames, covariance rotations, log-scales, opacity logits, SH).
pub fn pack_posed(s: &PosedGaussians) -> Vec<f64> {
    let mut v = Vec::new();
    for m in &s.means {
        v.extend_from_slice(m.as_slice());
    }
    for m in &s.dir_rots {
        v.extend_from_slice(m.as_slice());
    }
    for m in &s.cov_rots {
        v.extend_from_slice(m.as_slice());
    }
    for m in &s.log_scales {
        v.extend_from_slice(m.as_slice());
    }
    v.extend_from_slice(&s.opacity_logits);
    v.extend_from_slice(&s.sh);
    v
}

pub fn unpack_posed(template: &PosedGaussians, v: &[f64]) -> PosedGaussians {
    let n = template.means.len();
    let mut s = template.clone();
    let mut o = 0;
    for i in 0..n {
        s.means[i] = Vec3::from_column_slice(&v[o..o + 3]);
        o += 3;
    }
    for i in 0..n {
        s.dir_rots[i] = Mat3::from_column_slice(&v[o..o + 9]);
        o += 9;
    }
    for i in 0..n {
        s.cov_rots[i] = Mat3::from_column_slice(&v[o..o + 9]);
        o += 9;
    }
    for i in 0..n {
        s.log_scales[i] = Vec3::from_column_slice(&v[o..o + 3]);
        o += 3;
    }
    s.opacity_logits.copy_from_slice(&v[o..o + n]);
    o += n;
    let len = s.sh.len();
    s.sh.copy_from_slice(&v[o..o + len]);
    s
}

pub fn pack_posed_grads(g: &layersplat::gaussians::PosedGrads) -> Vec<f64> {
    let mut v = Vec::new();
    for m in &g.means {
        v.extend_from_slice(m.as_slice());
    }
    for m in &g.dir_rots {
        v.extend_from_slice(m.as_slice());
    }
    for m in &g.cov_rots {
        v.extend_from_slice(m.as_slice());
    }
    for m in &g.log_scales {
        v.extend_from_slice(m.as_slice());
    }
    v.extend_from_slice(&g.opacity_logits);
    v.extend_from_slice(&g.sh);
    v
}

/// Flattens a canonical set's parameters in storage order.
pub fn pack_set(s: &GaussianSet) -> Vec<f64> {
    [&s.means[..], &s.quats, &s.log_scales, &s.opacity_logits, &s.sh].concat()
}

pub fn unpack_set(template: &GaussianSet, v: &[f64]) -> GaussianSet {
    let mut s = template.clone();
    let mut o = 0;
    for field in [&mut s.means, &mut s.quats, &mut s.log_scales, &mut s.opacity_logits, &mut s.sh] {
        let len = field.len();
        field.copy_from_slice(&v[o..o + len]);
        o += len;
    }
    s
}

pub fn pack_set_grads(g: &layersplat::gaussians::GaussianGrads) -> Vec<f64> {
    [&g.means[..], &g.quats, &g.log_scales, &g.opacity_logits, &g.sh].concat()
}
