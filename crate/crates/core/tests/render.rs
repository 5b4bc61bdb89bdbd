mod common;

use common::*;
use layersplat::splatting::{render, render_backward, RenderGrads, RenderSettings};
use proptest::prelude::*;

const BG: [f64; 3] = [0.2, 0.4, 0.9];

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn tiled_renderer_matches_per_pixel_oracle(seed in 0u64..10_000, n in 1usize..200, tile in prop::sample::select(vec![8usize, 16, 5])) {
        let scene = random_scene(seed, n, 1, 0.9, (0.03, 0.25));
        let cam = tilted_camera(40, 32, 36.0);
        let s = RenderSettings { tile_size: tile, ..Default::default() };
        let (out, _) = render(&scene, &cam, BG, &s).unwrap();
        let oracle = oracle_render(&scene, &cam, BG, &s);
        prop_assert!(max_abs_diff(&out.color.data, &oracle.color.data) <= 1e-5);
        prop_assert!(max_abs_diff(&out.alpha.data, &oracle.alpha.data) <= 1e-5);
        for e in 0..2 {
            prop_assert!(max_abs_diff(&out.entity_alpha[e].data, &oracle.entity_alpha[e].data) <= 1e-5);
        }
    }

    #[test]
    fn entity_coverage_is_additive_and_bounded(seed in 0u64..10_000, n in 1usize..120) {
        let scene = random_scene(seed, n, 0, 0.8, (0.05, 0.4));
        let cam = axis_camera(32, 32, 30.0);
        let (out, _) = render(&scene, &cam, BG, &RenderSettings::default()).unwrap();
        for p in 0..out.alpha.data.len() {
            let sum: f64 = out.entity_alpha.iter().map(|e| e.data[p]).sum();
            prop_assert!((sum - out.alpha.data[p]).abs() <= 1e-12);
            prop_assert!(out.alpha.data[p] <= 1.0 + 1e-12);
            prop_assert!(out.alpha.data[p] >= 0.0);
        }
    }
}

#[test]
fn backward_matches_central_differences() {
    let scene = random_scene(7, 16, 1, 0.6, (0.08, 0.2));
    let cam = tilted_camera(24, 24, 30.0);
    let s = smooth_settings();
    let mut r = rng(99);
    let wc = random_weights(&mut r, 24 * 24 * 3);
    let wa = random_weights(&mut r, 24 * 24);
    let we: Vec<Vec<f64>> = (0..2).map(|_| random_weights(&mut r, 24 * 24)).collect();
    let objective = |sc: &layersplat::gaussians::PosedGaussians| {
        let (out, _) = render(sc, &cam, BG, &s).unwrap();
        dot(&out.color.data, &wc) + dot(&out.alpha.data, &wa) + (0..2).map(|e| dot(&out.entity_alpha[e].data, &we[e])).sum::<f64>()
    };
    let (_, cache) = render(&scene, &cam, BG, &s).unwrap();
    let up = RenderGrads { color: wc.clone(), alpha: wa.clone(), entity_alpha: we.clone() };
    let g = render_backward(&scene, &cache, &up).unwrap();
    let analytic = pack_posed_grads(&g);
    let mut params = pack_posed(&scene);
    let numeric = central_differences(&mut params, 1e-6, |p| objective(&unpack_posed(&scene, p)));
    let err = max_relative_error(&analytic, &numeric);
    assert!(err < 1e-4, "max relative error {err}");
}

#[test]
fn deterministic_across_runs() {
    let scene = random_scene(3, 150, 2, 0.9, (0.03, 0.3));
    let cam = axis_camera(48, 40, 40.0);
    let s = RenderSettings::default();
    let (a, ca) = render(&scene, &cam, BG, &s).unwrap();
    let (b, cb) = render(&scene, &cam, BG, &s).unwrap();
    assert_eq!(a.color.data, b.color.data);
    let up = RenderGrads::color_only(vec![1.0; 48 * 40 * 3]);
    let ga = render_backward(&scene, &ca, &up).unwrap();
    let gb = render_backward(&scene, &cb, &up).unwrap();
    assert_eq!(pack_posed_grads(&ga), pack_posed_grads(&gb));
}

#[test]
fn behind_camera_is_culled_with_zero_gradient() {
    let mut scene = random_scene(5, 4, 0, 0.3, (0.1, 0.2));
    scene.means[2].z = -1.0;
    let cam = axis_camera(16, 16, 20.0);
    let (_, cache) = render(&scene, &cam, BG, &RenderSettings::default()).unwrap();
    assert!(!cache.visible()[2]);
    let g = render_backward(&scene, &cache, &RenderGrads::color_only(vec![1.0; 16 * 16 * 3])).unwrap();
    assert_eq!(g.means[2], layersplat::math::Vec3::zeros());
    assert_eq!(g.opacity_logits[2], 0.0);
}
