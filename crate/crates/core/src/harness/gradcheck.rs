//! Finite-difference checks of every analytic gradient on small random
//! problems. Used by the `gradcheck` command.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::gaussians::{sh_coeff_count, GaussianSet, PosedGaussians, PosedGrads};
use crate::geometry::{deform_backward, deform_gaussians, forward_kinematics, Pose, Skeleton, SkinningWeights};
use crate::knn::knn_graph;
use crate::losses::{collision_loss, gaussian_reg_loss, iso_loss, s3im, S3imParams};
use crate::math::{self, Mat3, Mat4, Quat, Vec3};
use crate::raster::Image;
use crate::splatting::{render, render_backward, Camera, RenderGrads, RenderSettings};

/// Outcome of one suite over all scenes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteResult {
    pub suite: String,
    pub scenes: usize,
    pub max_rel_err: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Largest `|a - n| / max(|a|, |n|, floor)`, with `floor` at `1e-3` of the
/// largest numeric entry.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = numeric.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = (1e-3 * scale).max(1e-12);
    analytic.iter().zip(numeric).map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor)).fold(0.0, f64::max)
}

fn central(x: &mut [f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    (0..x.len())
        .map(|k| {
            let o = x[k];
            x[k] = o + h;
            let p = f(x);
            x[k] = o - h;
            let m = f(x);
            x[k] = o;
            (p - m) / (2.0 * h)
        })
        .collect()
}

fn weights(r: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| r.random_range(-1.0..1.0)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn flat3(v: &[Vec3]) -> Vec<f64> {
    v.iter().flat_map(|p| [p.x, p.y, p.z]).collect()
}

fn flat9(v: &[Mat3]) -> Vec<f64> {
    v.iter().flat_map(|m| m.as_slice().to_vec()).collect()
}

fn vecs(v: &[f64]) -> Vec<Vec3> {
    v.chunks_exact(3).map(Vec3::from_column_slice).collect()
}

fn mats(v: &[f64]) -> Vec<Mat3> {
    v.chunks_exact(9).map(Mat3::from_column_slice).collect()
}

fn rotation(r: &mut ChaCha8Rng) -> Mat3 {
    math::axis_angle_to_mat(&Vec3::from_fn(|_, _| r.random_range(-3.0..3.0)))
}

fn pack_posed(s: &PosedGaussians) -> Vec<f64> {
    [flat3(&s.means), flat9(&s.dir_rots), flat9(&s.cov_rots), flat3(&s.log_scales), s.opacity_logits.clone(), s.sh.clone()]
        .concat()
}

fn unpack_posed(t: &PosedGaussians, v: &[f64]) -> PosedGaussians {
    let n = t.means.len();
    let mut s = t.clone();
    let (a, rest) = v.split_at(3 * n);
    let (b, rest) = rest.split_at(9 * n);
    let (c, rest) = rest.split_at(9 * n);
    let (d, rest) = rest.split_at(3 * n);
    let (e, f) = rest.split_at(n);
    s.means = vecs(a);
    s.dir_rots = mats(b);
    s.cov_rots = mats(c);
    s.log_scales = vecs(d);
    s.opacity_logits = e.to_vec();
    s.sh = f.to_vec();
    s
}

fn pack_posed_grads(g: &PosedGrads) -> Vec<f64> {
    [flat3(&g.means), flat9(&g.dir_rots), flat9(&g.cov_rots), flat3(&g.log_scales), g.opacity_logits.clone(), g.sh.clone()]
        .concat()
}

fn random_posed(r: &mut ChaCha8Rng, n: usize) -> PosedGaussians {
    let mut s = PosedGaussians { sh_degree: 1, entity_names: vec!["a".into(), "b".into()], ..Default::default() };
    // Depths drawn from shuffled strata: no two Gaussians can swap depth order
    // within a finite-difference step.
    let mut strata: Vec<usize> = (0..n).collect();
    strata.shuffle(r);
    for k in strata {
        let z = 2.0 + 2.0 * (k as f64 + r.random_range(0.1..0.9)) / n as f64;
        s.means.push(Vec3::new(r.random_range(-0.6..0.6) * z / 2.0, r.random_range(-0.6..0.6) * z / 2.0, z));
        s.cov_rots.push(rotation(r));
        s.dir_rots.push(rotation(r) + Mat3::from_fn(|_, _| r.random_range(-0.1..0.1)));
        s.log_scales.push(Vec3::from_fn(|_, _| r.random_range(0.08..0.3f64).ln()));
        s.opacity_logits.push(math::logit(r.random_range(0.1..0.7)));
        for j in 0..sh_coeff_count(1) {
            for _ in 0..3 {
                s.sh.push(if j == 0 { r.random_range(-0.8..0.8) } else { r.random_range(-0.08..0.08) });
            }
        }
        s.entity.push(r.random_range(0..2));
    }
    s
}

fn render_case(seed: u64, h: f64) -> Result<f64> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let scene = random_posed(&mut r, 16);
    let cam = Camera::new(Mat4::identity(), [22.0, 22.0, 12.0, 12.0], 24, 24, 0.01)?;
    let settings = RenderSettings { footprint_sigma: 12.0, min_transmittance: 0.0, ..Default::default() };
    let bg = [0.1, 0.2, 0.3];
    let up = RenderGrads {
        color: weights(&mut r, 24 * 24 * 3),
        alpha: weights(&mut r, 24 * 24),
        entity_alpha: vec![weights(&mut r, 24 * 24), weights(&mut r, 24 * 24)],
    };
    let (_, cache) = render(&scene, &cam, bg, &settings)?;
    let analytic = pack_posed_grads(&render_backward(&scene, &cache, &up)?);
    let mut x = pack_posed(&scene);
    let numeric = central(&mut x, h, |v| {
        let (o, _) = render(&unpack_posed(&scene, v), &cam, bg, &settings).expect("render");
        dot(&o.color.data, &up.color) + dot(&o.alpha.data, &up.alpha)
            + dot(&o.entity_alpha[0].data, &up.entity_alpha[0])
            + dot(&o.entity_alpha[1].data, &up.entity_alpha[1])
    });
    Ok(max_rel_err(&analytic, &numeric))
}

fn random_set(r: &mut ChaCha8Rng, n: usize) -> GaussianSet {
    let mut set = GaussianSet::empty("g", 1);
    for _ in 0..n {
        let q = Quat::from_fn(|_, _| r.random_range(-1.0..1.0)).normalize();
        let row: Vec<f64> = (0..12).map(|_| r.random_range(-0.3..0.3)).collect();
        set.push(Vec3::from_fn(|_, _| r.random_range(-0.5..0.5)), q, Vec3::from_fn(|_, _| r.random_range(-3.0..-1.5)), 0.2, &row);
    }
    set
}

fn deform_case(seed: u64, h: f64) -> Result<f64> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let joints = 3;
    let sk = Skeleton::chain(Vec3::new(0.0, -0.3, 0.0), Vec3::new(0.05, 0.3, 0.0), joints);
    let mut pose = Pose::rest(joints);
    pose.root_translation = Vec3::from_fn(|_, _| r.random_range(-0.2..0.2));
    pose.rotations.iter_mut().for_each(|v| *v = Vec3::from_fn(|_, _| r.random_range(-0.6..0.6)));
    let bones = forward_kinematics(&sk, &pose)?;
    let n = 12;
    let set = random_set(&mut r, n);
    let mut w = SkinningWeights::empty(joints);
    for _ in 0..n {
        let raw: Vec<f64> = (0..joints).map(|_| r.random_range(0.05..1.0)).collect();
        let s: f64 = raw.iter().sum();
        let base: Vec<f64> = raw.iter().map(|v| v / s).collect();
        let delta: Vec<f64> = (0..joints).map(|_| r.random_range(-0.05..0.05)).collect();
        w.push(&base, &delta);
    }
    let (posed, cache) = deform_gaussians(&set, &w, &bones)?;
    let wts = weights(&mut r, pack_posed(&posed).len());
    let u = unpack_posed(&posed, &wts);
    let up = PosedGrads {
        means: u.means,
        dir_rots: u.dir_rots,
        cov_rots: u.cov_rots,
        log_scales: u.log_scales,
        opacity_logits: u.opacity_logits,
        sh: u.sh,
        ..PosedGrads::zeros(n, set.sh_stride())
    };
    let g = deform_backward(&set, &w, &bones, &cache, &up)?;
    let analytic = [&g.set.means[..], &g.set.quats, &g.set.log_scales, &g.set.opacity_logits, &g.set.sh, &g.delta].concat();
    let pack = |s: &GaussianSet, w: &SkinningWeights| [&s.means[..], &s.quats, &s.log_scales, &s.opacity_logits, &s.sh, &w.delta].concat();
    let mut x = pack(&set, &w);
    let numeric = central(&mut x, h, |v| {
        let mut s = set.clone();
        let mut ww = w.clone();
        let mut o = 0;
        for f in [&mut s.means, &mut s.quats, &mut s.log_scales, &mut s.opacity_logits, &mut s.sh, &mut ww.delta] {
            let l = f.len();
            f.copy_from_slice(&v[o..o + l]);
            o += l;
        }
        let (p, _) = deform_gaussians(&s, &ww, &bones).expect("deform");
        dot(&pack_posed(&p), &wts)
    });
    Ok(max_rel_err(&analytic, &numeric))
}

fn iso_case(seed: u64, h: f64) -> Result<f64> {
    // The deformed state is the reference stretched by 1.4-1.6x (plus a little
    // noise), so every pair distance differs from its reference by far more
    // than a finite-difference step and no term sits on the kink of |.|.
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let n = 15;
    let refs: Vec<Vec3> = (0..n).map(|_| Vec3::from_fn(|_, _| r.random_range(-1.0..1.0))).collect();
    let ref_covs: Vec<Mat3> = (0..n)
        .map(|_| math::covariance_from(&rotation(&mut r), &Vec3::from_fn(|_, _| r.random_range(0.05..0.3))))
        .collect();
    let means: Vec<Vec3> = refs.iter().map(|p| p * 1.5 + Vec3::from_fn(|_, _| r.random_range(-0.01..0.01))).collect();
    let stretch = r.random_range(1.4..1.6);
    let covs: Vec<Mat3> = ref_covs.iter().map(|c| c * stretch).collect();
    let graph = knn_graph(&refs, 5);
    let (_, g) = iso_loss(&means, &covs, &refs, &ref_covs, &graph, 1.0, 0.1)?;
    let analytic = [flat3(&g.means), flat9(&g.covs), flat3(&g.ref_means), flat9(&g.ref_covs)].concat();
    let mut x = [flat3(&means), flat9(&covs), flat3(&refs), flat9(&ref_covs)].concat();
    let numeric = central(&mut x, h, |v| {
        let (a, rest) = v.split_at(3 * n);
        let (b, rest) = rest.split_at(9 * n);
        let (c, d) = rest.split_at(3 * n);
        iso_loss(&vecs(a), &mats(b), &vecs(c), &mats(d), &graph, 1.0, 0.1).expect("iso").0
    });
    Ok(max_rel_err(&analytic, &numeric))
}

fn collision_case(seed: u64, h: f64) -> Result<f64> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let joints = vec![Vec3::new(0.0, -0.2, 0.0), Vec3::new(0.0, 0.2, 0.0)];
    let on_shell = |r: &mut ChaCha8Rng, rad: f64| {
        let a: f64 = r.random_range(0.0..std::f64::consts::TAU);
        Vec3::new(rad * a.cos(), r.random_range(-0.3..0.3), rad * a.sin())
    };
    let body: Vec<Vec3> = (0..20).map(|_| on_shell(&mut r, 0.2)).collect();
    // Redraw until every body vertex has a clear nearest garment point, so
    // the pairing cannot flip within a finite-difference step.
    let garment = loop {
        let g: Vec<Vec3> = (0..15)
            .map(|_| {
                let rad = r.random_range(0.15..0.25);
                on_shell(&mut r, rad)
            })
            .collect();
        let clear = body.iter().all(|b| {
            let mut d: Vec<f64> = g.iter().map(|c| (c - b).norm()).collect();
            d.sort_by(f64::total_cmp);
            d[1] - d[0] > 2e-3
        });
        if clear {
            break g;
        }
    };
    let (_, g) = collision_loss(&body, &garment, &joints, 0.01, None)?;
    let analytic = flat3(&g.garment);
    let mut x = flat3(&garment);
    let numeric = central(&mut x, h, |v| collision_loss(&body, &vecs(v), &joints, 0.01, None).expect("collision").0);
    Ok(max_rel_err(&analytic, &numeric))
}

fn reg_case(seed: u64, h: f64) -> Result<f64> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let n = 15;
    let set = random_set(&mut r, n);
    let mut w = SkinningWeights::empty(3);
    for _ in 0..n {
        let b: Vec<f64> = (0..3).map(|_| r.random_range(0.0..1.0)).collect();
        let d: Vec<f64> = (0..3).map(|_| r.random_range(-0.1..0.1)).collect();
        w.push(&b, &d);
    }
    let graph = knn_graph(&(0..n).map(|i| set.mean(i)).collect::<Vec<_>>(), 5);
    let (_, g) = gaussian_reg_loss(&set, Some(&w), &graph, 0.7, 1.3)?;
    let analytic = [&g.set.log_scales[..], &g.delta].concat();
    let mut x = [&set.log_scales[..], &w.delta].concat();
    let numeric = central(&mut x, h, |v| {
        let mut s = set.clone();
        let mut ww = w.clone();
        s.log_scales.copy_from_slice(&v[..3 * n]);
        ww.delta.copy_from_slice(&v[3 * n..]);
        gaussian_reg_loss(&s, Some(&ww), &graph, 0.7, 1.3).expect("reg").0
    });
    Ok(max_rel_err(&analytic, &numeric))
}

fn s3im_case(seed: u64, h: f64) -> Result<f64> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let (w, hh) = (12, 10);
    let img = |r: &mut ChaCha8Rng| Image::from_data(w, hh, 3, (0..w * hh * 3).map(|_| r.random_range(0.0..1.0)).collect());
    let a = img(&mut r)?;
    let b = img(&mut r)?;
    let p = S3imParams { patch: 6, kernel: 5, stride: 2, repeats: 3 };
    let (_, g) = s3im(&a, &b, &p, seed)?;
    let mut x = a.data.clone();
    let numeric = central(&mut x, h, |v| {
        s3im(&Image::from_data(w, hh, 3, v.to_vec()).expect("image"), &b, &p, seed).expect("s3im").0
    });
    Ok(max_rel_err(&g.data, &numeric))
}

type Case = fn(u64, f64) -> Result<f64>;

/// Runs every suite on `scenes` seeded problems with step `h`.
pub fn run(scenes: usize, seed: u64, h: f64) -> Result<Vec<SuiteResult>> {
    let suites: [(&str, Case, f64); 6] = [
        ("render", render_case, 1e-3),
        ("deform", deform_case, 1e-4),
        ("iso", iso_case, 1e-3),
        ("collision", collision_case, 1e-3),
        ("gaussian_reg", reg_case, 1e-3),
        ("s3im", s3im_case, 1e-3),
    ];
    suites
        .iter()
        .map(|(name, case, tol)| {
            let mut worst = 0.0f64;
            for s in 0..scenes {
                worst = worst.max(case(seed.wrapping_add(s as u64), h)?);
            }
            Ok(SuiteResult { suite: name.to_string(), scenes, max_rel_err: worst, tolerance: *tol, passed: worst <= *tol })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_suites_pass_on_a_few_scenes() {
        for r in run(2, 11, 1e-5).unwrap() {
            assert!(r.passed, "{r:?}");
        }
    }
}
