mod common;

use common::*;
use layersplat::gaussians::{GaussianSet, PosedGaussians, PosedGrads};
use layersplat::geometry::{deform_backward, deform_gaussians, forward_kinematics, BoneTransforms, Pose, Skeleton, SkinningWeights};
use layersplat::math::{self, Mat3, Vec3};
use layersplat::splatting::{render, render_backward, RenderGrads};
use proptest::prelude::*;
use rand::Rng;

fn posed_bones(seed: u64, joints: usize, angle: f64) -> BoneTransforms {
    let mut r = rng(seed);
    let sk = Skeleton::chain(Vec3::new(0.0, -0.4, 0.0), Vec3::new(0.05, 0.3, 0.0), joints);
    let mut pose = Pose::rest(joints);
    for rot in pose.rotations.iter_mut() {
        *rot = Vec3::from_fn(|_, _| r.random_range(-angle..angle));
    }
    pose.root_translation = Vec3::from_fn(|_, _| r.random_range(-0.2..0.2));
    forward_kinematics(&sk, &pose).unwrap()
}

/// Dense random weights (each row a partition of unity) with small deltas.
fn random_skinning(seed: u64, joints: usize, n: usize, delta: f64) -> SkinningWeights {
    let mut r = rng(seed);
    let mut base = Vec::with_capacity(n * joints);
    for _ in 0..n {
        let row: Vec<f64> = (0..joints).map(|_| r.random_range(0.05..1.0)).collect();
        let s: f64 = row.iter().sum();
        base.extend(row.iter().map(|w| w / s));
    }
    let mut w = SkinningWeights::new(joints, base).unwrap();
    for d in w.delta.iter_mut() {
        *d = r.random_range(-delta..delta);
    }
    w
}

fn weighted_posed(p: &PosedGaussians, up: &PosedGrads) -> f64 {
    let mut s = 0.0;
    for i in 0..p.means.len() {
        s += p.means[i].dot(&up.means[i]);
        s += p.dir_rots[i].component_mul(&up.dir_rots[i]).sum();
        s += p.cov_rots[i].component_mul(&up.cov_rots[i]).sum();
        s += p.log_scales[i].dot(&up.log_scales[i]);
        s += p.opacity_logits[i] * up.opacity_logits[i];
    }
    s + dot(&p.sh, &up.sh)
}

fn random_upstream(seed: u64, n: usize, stride: usize) -> PosedGrads {
    let mut r = rng(seed);
    let mut g = PosedGrads::zeros(n, stride);
    for i in 0..n {
        g.means[i] = Vec3::from_fn(|_, _| r.random_range(-1.0..1.0));
        g.dir_rots[i] = Mat3::from_fn(|_, _| r.random_range(-1.0..1.0));
        g.cov_rots[i] = Mat3::from_fn(|_, _| r.random_range(-1.0..1.0));
        g.log_scales[i] = Vec3::from_fn(|_, _| r.random_range(-1.0..1.0));
        g.opacity_logits[i] = r.random_range(-1.0..1.0);
    }
    for v in g.sh.iter_mut() {
        *v = r.random_range(-1.0..1.0);
    }
    g
}

#[test]
fn deform_backward_matches_central_differences() {
    let set = random_set(11, 12, 1);
    let w = random_skinning(12, 4, 12, 0.05);
    let bones = posed_bones(13, 4, 0.8);
    let up = random_upstream(14, 12, set.sh_stride());
    let (_, cache) = deform_gaussians(&set, &w, &bones).unwrap();
    let g = deform_backward(&set, &w, &bones, &cache, &up).unwrap();

    let mut params = pack_set(&set);
    let numeric = central_differences(&mut params, 1e-6, |p| {
        weighted_posed(&deform_gaussians(&unpack_set(&set, p), &w, &bones).unwrap().0, &up)
    });
    let err = max_relative_error(&pack_set_grads(&g.set), &numeric);
    assert!(err < 1e-5, "set gradient error {err}");

    let mut delta = w.delta.clone();
    let numeric = central_differences(&mut delta, 1e-6, |d| {
        let mut w2 = w.clone();
        w2.delta.copy_from_slice(d);
        weighted_posed(&deform_gaussians(&set, &w2, &bones).unwrap().0, &up)
    });
    let err = max_relative_error(&g.delta, &numeric);
    assert!(err < 1e-5, "delta gradient error {err}");
}

#[test]
fn render_of_deformed_set_chains_to_canonical_parameters() {
    let mut set = random_set(21, 10, 1);
    // Put the set in front of the camera.
    for i in 0..set.len() {
        let m = set.mean(i) * 0.6 + Vec3::new(0.0, 0.0, 3.0);
        set.set_mean(i, &m);
    }
    let w = random_skinning(22, 3, 10, 0.02);
    let bones = posed_bones(23, 3, 0.15);
    let cam = axis_camera(24, 24, 28.0);
    let s = smooth_settings();
    let bg = [0.3, 0.3, 0.3];
    let mut r = rng(24);
    let wc = random_weights(&mut r, 24 * 24 * 3);
    let f = |set: &GaussianSet, w: &SkinningWeights| {
        let (posed, _) = deform_gaussians(set, w, &bones).unwrap();
        dot(&render(&posed, &cam, bg, &s).unwrap().0.color.data, &wc)
    };
    let (posed, dcache) = deform_gaussians(&set, &w, &bones).unwrap();
    let (_, rcache) = render(&posed, &cam, bg, &s).unwrap();
    let pg = render_backward(&posed, &rcache, &RenderGrads::color_only(wc.clone())).unwrap();
    let g = deform_backward(&set, &w, &bones, &dcache, &pg).unwrap();

    let mut params = pack_set(&set);
    let numeric = central_differences(&mut params, 1e-6, |p| f(&unpack_set(&set, p), &w));
    let err = max_relative_error(&pack_set_grads(&g.set), &numeric);
    assert!(err < 1e-4, "set gradient error {err}");
    let mut delta = w.delta.clone();
    let numeric = central_differences(&mut delta, 1e-6, |d| {
        let mut w2 = w.clone();
        w2.delta.copy_from_slice(d);
        f(&set, &w2)
    });
    let err = max_relative_error(&g.delta, &numeric);
    assert!(err < 1e-4, "delta gradient error {err}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn rest_pose_leaves_set_unchanged(seed in 0u64..10_000, n in 1usize..60) {
        let set = random_set(seed, n, 1);
        // One-hot rows sum to exactly 1, so the blend is exactly the identity.
        let w = SkinningWeights::rigid(5, n, (seed % 5) as usize);
        let bones = forward_kinematics(&Skeleton::chain(Vec3::zeros(), Vec3::new(0.0, 0.3, 0.0), 5), &Pose::rest(5)).unwrap();
        let (posed, _) = deform_gaussians(&set, &w, &bones).unwrap();
        let canon = PosedGaussians::from_set(&set);
        prop_assert_eq!(&posed.means, &canon.means);
        prop_assert_eq!(&posed.dir_rots, &canon.dir_rots);
        prop_assert_eq!(&posed.cov_rots, &canon.cov_rots);
        prop_assert_eq!(&posed.sh, &canon.sh);
    }

    #[test]
    fn single_bone_is_a_rigid_motion(seed in 0u64..10_000, n in 1usize..40, joint in 0usize..4) {
        let set = random_set(seed, n, 0);
        let bones = posed_bones(seed + 1, 4, 2.5);
        let w = SkinningWeights::rigid(4, n, joint);
        let (posed, _) = deform_gaussians(&set, &w, &bones).unwrap();
        let rot = math::rot_part(&bones.transforms[joint]);
        let t = math::trans_part(&bones.transforms[joint]);
        for i in 0..n {
            prop_assert!((posed.means[i] - (rot * set.mean(i) + t)).norm() < 1e-12);
            let cov = posed.covariance(i);
            let expect = rot * set.covariance(i) * rot.transpose();
            prop_assert!((cov - expect).norm() < 1e-12);
        }
    }

    #[test]
    fn blended_covariance_frames_are_rotations(seed in 0u64..10_000, n in 1usize..40) {
        let set = random_set(seed, n, 0);
        let w = random_skinning(seed + 2, 4, n, 0.1);
        let bones = posed_bones(seed + 3, 4, 1.2);
        match deform_gaussians(&set, &w, &bones) {
            Ok((posed, _)) => {
                for r in &posed.cov_rots {
                    prop_assert!(math::is_rotation(r, 1e-9));
                }
            }
            // Opposing bones can fold a blend onto itself; that must surface as an error, never NaN.
            Err(e) => {
                let non_finite = matches!(e, layersplat::Error::NonFinite { .. });
                prop_assert!(non_finite);
            }
        }
    }
}
