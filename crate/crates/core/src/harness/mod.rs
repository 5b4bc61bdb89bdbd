//! Synthetic layered scenes, reconstruction metrics and benchmarks.

pub mod gradcheck;
mod metrics;

pub use metrics::{bench_render, evaluate, layer_contact, mask_iou, psnr, EvalReport, LayerContact, MetricsReport, RenderBench};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::gaussians::{sh, sh_coeff_count, GaussianSet};
use crate::geometry::{Pose, SkinningWeights};
use crate::io::{BundleFrame, SceneBundle, SceneInfo, BUNDLE_VERSION};
use crate::knn::PointIndex;
use crate::math::{Quat, Vec3};
use crate::model::{Entity, Model};
use crate::splatting::{Camera, RenderSettings};
use crate::templates::{
    capsule_template, generate_garment_template, init_gaussians_from_vertices, stride_subset, vertex_normals, BodyTemplate,
    CapsuleParams, GarmentSpec, GaussianDefaults,
};
use crate::training::Frame;

/// Mask binarization threshold on rendered entity opacity.
pub const MASK_THRESHOLD: f64 = 0.5;

/// Garment shell with its Gaussian count and base color.
#[derive(Clone, Debug, PartialEq)]
pub struct GarmentPlan {
    pub spec: GarmentSpec,
    pub gaussians: usize,
    pub color: [f64; 3],
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub seed: u64,
    pub body_gaussians: usize,
    pub body_color: [f64; 3],
    pub garments: Vec<GarmentPlan>,
    pub train_views: usize,
    pub test_views: usize,
    pub width: usize,
    pub height: usize,
    /// Focal length in pixels.
    pub focal: f64,
    pub camera_distance: f64,
    /// Largest per-joint rotation angle of the random poses (radians).
    pub pose_angle: f64,
    pub sh_degree: usize,
    /// Per-Gaussian color jitter around the entity color.
    pub color_jitter: f64,
    pub opacity_logit: f64,
    pub background: [f64; 3],
    pub capsule: CapsuleParams,
}

impl Default for SceneSpec {
    /// One body and two garments (shirt, pants), 36 + 6 views at 64x64.
    fn default() -> Self {
        let garment = |name: &str, regions: &[&str], gaussians, color| GarmentPlan {
            spec: GarmentSpec {
                name: name.into(),
                regions: regions.iter().map(|s| s.to_string()).collect(),
                offset: 0.025,
                layer: 1,
            },
            gaussians,
            color,
        };
        Self {
            seed: 7,
            body_gaussians: 800,
            body_color: [0.86, 0.66, 0.52],
            garments: vec![
                garment("shirt", &["torso"], 600, [0.18, 0.32, 0.78]),
                garment("pants", &["waist", "legs"], 600, [0.30, 0.27, 0.22]),
            ],
            train_views: 36,
            test_views: 6,
            width: 64,
            height: 64,
            focal: 100.0,
            camera_distance: 3.2,
            pose_angle: 0.2,
            sh_degree: 1,
            color_jitter: 0.04,
            opacity_logit: 3.0,
            background: [0.0; 3],
            capsule: CapsuleParams::default(),
        }
    }
}

/// Ground truth plus the rendered observations.
#[derive(Clone, Debug)]
pub struct SyntheticScene {
    pub spec: SceneSpec,
    pub template: BodyTemplate,
    pub model: Model,
    pub train: Vec<Frame>,
    pub test: Vec<Frame>,
}

impl SyntheticScene {
    pub fn entity_names(&self) -> Vec<String> {
        self.model.names()
    }

    /// Canonical body vertices and their weights, the collision surface.
    pub fn body_surface(&self) -> (&[Vec3], &SkinningWeights) {
        (&self.template.rest_vertices, &self.template.weights)
    }

    pub fn to_bundle(&self) -> SceneBundle {
        let frames = self
            .train
            .iter()
            .map(|f| (f, false))
            .chain(self.test.iter().map(|f| (f, true)))
            .map(|(f, held_out)| BundleFrame {
                camera: f.camera.clone(),
                held_out,
                pose: f.pose.clone(),
                image: f.image.clone(),
                masks: f.masks.clone(),
            })
            .collect::<Vec<_>>();
        SceneBundle {
            info: SceneInfo {
                version: BUNDLE_VERSION,
                width: self.spec.width,
                height: self.spec.height,
                background: self.spec.background,
                entities: self.entity_names(),
                frames: frames.len(),
                garments: self.spec.garments.iter().map(|g| g.spec.clone()).collect(),
                seed: Some(self.spec.seed),
            },
            template: self.template.clone(),
            frames,
            gt: Some(self.model.clone()),
        }
    }
}

/// Training and held-out frames of a bundle.
pub fn bundle_frames(b: &SceneBundle) -> (Vec<Frame>, Vec<Frame>) {
    let mut train = Vec::new();
    let mut test = Vec::new();
    for f in &b.frames {
        let fr = Frame { camera: f.camera.clone(), pose: f.pose.clone(), image: f.image.clone(), masks: f.masks.clone() };
        if f.held_out {
            test.push(fr)
        } else {
            train.push(fr)
        }
    }
    (train, test)
}

fn colored_set(
    vertices: &[Vec3],
    name: &str,
    color: [f64; 3],
    spec: &SceneSpec,
    rng: &mut ChaCha8Rng,
) -> GaussianSet {
    let d = GaussianDefaults { sh_degree: spec.sh_degree, opacity_logit: spec.opacity_logit, fallback_scale: 0.02 };
    let mut set = init_gaussians_from_vertices(vertices, name, &d);
    let k = sh_coeff_count(spec.sh_degree);
    for i in 0..set.len() {
        let row = set.sh_row_mut(i);
        for c in 0..3 {
            let v = color[c] + rng.random_range(-spec.color_jitter..=spec.color_jitter);
            row[c] = sh::dc_for_rgb(v.clamp(0.02, 0.98));
            for j in 1..k {
                row[3 * j + c] = rng.random_range(-0.03..0.03);
            }
        }
    }
    set
}

fn random_pose(joints: usize, max_angle: f64, rng: &mut ChaCha8Rng) -> Pose {
    let mut p = Pose::rest(joints);
    for r in p.rotations.iter_mut() {
        *r = Vec3::from_fn(|_, _| rng.random_range(-max_angle..max_angle));
    }
    p
}

/// Camera on a ring around the vertical axis with a gentle height wobble.
fn ring_camera(spec: &SceneSpec, azimuth: f64, k: usize) -> Result<Camera> {
    let h = 0.35 * ((k % 3) as f64 - 1.0);
    let eye = Vec3::new(azimuth.sin() * spec.camera_distance, h, azimuth.cos() * spec.camera_distance);
    let mut cam = Camera::look_at(eye, Vec3::zeros(), Vec3::y(), spec.focal, spec.width, spec.height)?;
    cam.near = 0.1;
    Ok(cam)
}

fn render_frame(model: &Model, camera: Camera, pose: Pose, bg: [f64; 3]) -> Result<Frame> {
    let out = model.render(&pose, &camera, bg, &RenderSettings::default())?;
    let masks = out.entity_alpha.iter().map(|a| a.threshold(MASK_THRESHOLD)).collect();
    Ok(Frame { camera, pose, image: out.color, masks })
}

/// Builds the ground-truth layered model from a capsule body and shell
/// garments, then renders every view under its own seeded pose.
pub fn make_scene(spec: &SceneSpec) -> Result<SyntheticScene> {
    if spec.train_views == 0 || spec.body_gaussians == 0 {
        return Err(Error::invalid("scene needs at least one training view and one body Gaussian"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let template = capsule_template(&spec.capsule)?;
    let verts = &template.rest_vertices;

    let idx = stride_subset(verts.len(), spec.body_gaussians);
    let body_pts: Vec<Vec3> = idx.iter().map(|&i| verts[i]).collect();
    let mut entities = vec![Entity {
        set: colored_set(&body_pts, "body", spec.body_color, spec, &mut rng),
        weights: template.weights.select(&idx, true),
    }];
    for g in &spec.garments {
        let gt = generate_garment_template(&template, verts, &g.spec)?;
        let idx = stride_subset(gt.vertices.len(), g.gaussians);
        let pts: Vec<Vec3> = idx.iter().map(|&i| gt.vertices[i]).collect();
        entities.push(Entity {
            set: colored_set(&pts, &g.spec.name, g.color, spec, &mut rng),
            weights: gt.weights.select(&idx, true),
        });
    }
    let model = Model { skeleton: template.skeleton.clone(), entities };
    model.validate()?;

    let joints = model.skeleton.joint_count();
    let step = std::f64::consts::TAU / spec.train_views as f64;
    let mut train = Vec::with_capacity(spec.train_views);
    for k in 0..spec.train_views {
        let pose = random_pose(joints, spec.pose_angle, &mut rng);
        train.push(render_frame(&model, ring_camera(spec, k as f64 * step, k)?, pose, spec.background)?);
    }
    let mut test = Vec::with_capacity(spec.test_views);
    for k in 0..spec.test_views {
        // Held-out views sit between training azimuths.
        let az = (k as f64 + 0.5) * std::f64::consts::TAU / spec.test_views.max(1) as f64 + 0.5 * step;
        let pose = random_pose(joints, spec.pose_angle, &mut rng);
        test.push(render_frame(&model, ring_camera(spec, az, k + 1)?, pose, spec.background)?);
    }
    Ok(SyntheticScene { spec: spec.clone(), template, model, train, test })
}

/// How far [`perturb_model`] moves each attribute.
#[derive(Clone, Debug, PartialEq)]
pub struct Perturbation {
    /// Position noise standard deviation (meters).
    pub position: f64,
    pub log_scale: f64,
    pub opacity_logit: f64,
    /// Uniform color offset half-width, in radiance units.
    pub color: f64,
    /// Drop view-dependent radiance coefficients.
    pub reset_higher_sh: bool,
}

impl Default for Perturbation {
    fn default() -> Self {
        Self { position: 0.01, log_scale: 0.25, opacity_logit: 1.0, color: 0.15, reset_higher_sh: true }
    }
}

/// Seeded noisy copy of `model`: the starting point of reconstruction runs.
pub fn perturb_model(model: &Model, p: &Perturbation, seed: u64) -> Model {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let mut out = model.clone();
    for e in &mut out.entities {
        let s = &mut e.set;
        s.means.iter_mut().for_each(|v| *v += p.position * unit.sample(&mut rng));
        s.log_scales.iter_mut().for_each(|v| *v += p.log_scale * unit.sample(&mut rng));
        s.opacity_logits.iter_mut().for_each(|v| *v += p.opacity_logit * unit.sample(&mut rng));
        let stride = s.sh_stride();
        for i in 0..s.len() {
            let row = &mut s.sh[i * stride..(i + 1) * stride];
            for c in 0..3 {
                row[c] += rng.random_range(-p.color..=p.color) / sh::SH_C0;
            }
            if p.reset_higher_sh {
                row[3..].iter_mut().for_each(|v| *v = 0.0);
            }
        }
        let small = Quat::from_fn(|_, _| 0.05 * unit.sample(&mut rng));
        for i in 0..s.len() {
            let q = s.raw_quat(i) + small;
            s.quats[4 * i..4 * i + 4].copy_from_slice(q.as_slice());
        }
        s.normalize_quats();
    }
    out
}

/// Moves every garment Gaussian to `depth` below its nearest canonical body
/// vertex, so garments start inside the body.
pub fn penetrating_model(model: &Model, template: &BodyTemplate, depth: f64) -> Result<Model> {
    let verts = &template.rest_vertices;
    let normals = vertex_normals(verts, &template.faces, &template.skeleton.rest_joints());
    let index = PointIndex::new(verts).ok_or_else(|| Error::invalid("template has no vertices"))?;
    let mut out = model.clone();
    for e in out.entities.iter_mut().skip(1) {
        for i in 0..e.set.len() {
            let (v, _) = index.nearest(&e.set.mean(i));
            e.set.set_mean(i, &(verts[v] - normals[v] * depth));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SceneSpec {
        let mut s = SceneSpec {
            body_gaussians: 300,
            train_views: 4,
            test_views: 2,
            width: 32,
            height: 32,
            focal: 50.0,
            capsule: CapsuleParams { rings: 24, segments: 16, ..Default::default() },
            ..Default::default()
        };
        for g in &mut s.garments {
            g.gaussians = 100;
        }
        s
    }

    #[test]
    fn same_seed_same_scene() {
        let a = make_scene(&small()).unwrap();
        let b = make_scene(&small()).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.train, b.train);
        assert_eq!(a.test, b.test);
    }

    #[test]
    fn counts_and_masks() {
        let mut spec = small();
        spec.garments.truncate(1);
        let s = make_scene(&spec).unwrap();
        assert_eq!(s.model.entities.iter().map(|e| e.set.len()).collect::<Vec<_>>(), vec![300, 100]);
        assert_eq!(s.train.len(), 4);
        assert_eq!(s.train.iter().map(|f| f.masks.len()).sum::<usize>(), 8);
        for f in s.train.iter().chain(&s.test) {
            assert!(f.masks.iter().all(|m| m.data.iter().all(|v| *v == 0.0 || *v == 1.0)));
        }
    }

    #[test]
    fn every_entity_visible_in_most_views() {
        let s = make_scene(&small()).unwrap();
        let frames: Vec<&Frame> = s.train.iter().chain(&s.test).collect();
        for e in 0..s.model.entities.len() {
            let seen = frames.iter().filter(|f| f.masks[e].data.iter().any(|v| *v > 0.0)).count();
            assert!(seen * 5 >= frames.len() * 4, "entity {e} seen in {seen} of {}", frames.len());
        }
    }

    #[test]
    fn rerendering_ground_truth_reproduces_targets() {
        let s = make_scene(&small()).unwrap();
        for f in &s.train {
            let out = s.model.render(&f.pose, &f.camera, s.spec.background, &RenderSettings::default()).unwrap();
            assert_eq!(out.color, f.image);
        }
    }

    #[test]
    fn garment_masks_are_in_front_of_the_body() {
        // Each entity rendered alone gives its own depth; where a garment
        // owns a pixel the bare body also covers, the garment is nearer.
        let s = make_scene(&small()).unwrap();
        let alone = |e: usize| Model { skeleton: s.model.skeleton.clone(), entities: vec![s.model.entities[e].clone()] };
        let mut checked = 0;
        let mut bad = 0;
        for f in s.train.iter().chain(&s.test) {
            let r = |e: usize| alone(e).render(&f.pose, &f.camera, s.spec.background, &RenderSettings::default()).unwrap();
            let body = r(0);
            for g in 1..s.model.entities.len() {
                let gar = r(g);
                for p in 0..f.image.pixel_count() {
                    if f.masks[g].data[p] > 0.0 && body.alpha.data[p] > 0.5 {
                        assert_eq!(f.masks[0].data[p], 0.0);
                        let zg = gar.depth.data[p] / gar.alpha.data[p];
                        let zb = body.depth.data[p] / body.alpha.data[p];
                        bad += (zg >= zb) as usize;
                        checked += 1;
                    }
                }
            }
        }
        assert!(checked > 100);
        // Splat depth is the centre depth, so a few pixels at shell borders
        // can read slightly behind the body surface.
        assert!(bad * 20 <= checked, "{bad} of {checked} garment pixels behind the body");
    }

    #[test]
    fn contact_separates_dressed_from_penetrating() {
        let scene = make_scene(&small()).unwrap();
        let rest = Pose::rest(scene.model.skeleton.joint_count());
        let gt = layer_contact(&scene.model, scene.body_surface(), &rest, 0.0, Some(0.04)).unwrap();
        assert_eq!(gt.collision, 0.0);
        assert!(gt.min_clearance.unwrap() > 0.0);
        let bad = penetrating_model(&scene.model, &scene.template, 0.02).unwrap();
        let c = layer_contact(&bad, scene.body_surface(), &rest, 0.0, Some(0.04)).unwrap();
        assert!(c.collision > 0.0 && c.min_clearance.unwrap() < 0.0, "{c:?}");
    }

    #[test]
    fn perturbation_is_seeded_and_keeps_counts() {
        let s = make_scene(&small()).unwrap();
        let a = perturb_model(&s.model, &Perturbation::default(), 3);
        assert_eq!(a, perturb_model(&s.model, &Perturbation::default(), 3));
        assert_ne!(a, s.model);
        assert_eq!(a.gaussian_count(), s.model.gaussian_count());
        a.validate().unwrap();
    }

    #[test]
    fn penetrating_model_is_inside() {
        let s = make_scene(&small()).unwrap();
        let m = penetrating_model(&s.model, &s.template, 0.02).unwrap();
        let body = &s.template.rest_vertices;
        let joints = s.template.skeleton.rest_joints();
        let garment: Vec<Vec3> = (0..m.entities[1].set.len()).map(|i| m.entities[1].set.mean(i)).collect();
        let c = crate::losses::clearances(body, &garment, &joints, Some(0.1));
        assert!(c.iter().cloned().fold(f64::INFINITY, f64::min) < 0.0);
    }
}
