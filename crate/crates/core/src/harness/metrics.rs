use std::collections::BTreeMap;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::MASK_THRESHOLD;
use crate::error::{Error, Result};
use crate::gaussians::{sh, GaussianSet, PosedGaussians};
use crate::geometry::{deform_gaussians, deform_points, Pose, SkinningWeights};
use crate::losses::{clearances, collision_loss, ssim, SsimParams};
use crate::math::{Quat, Vec3};
use crate::model::Model;
use crate::raster::Image;
use crate::splatting::{render, Camera, RenderSettings};
use crate::training::Frame;

/// Peak signal-to-noise ratio of images in `[0, 1]`; `+inf` for identical images.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    a.check_shape(b)?;
    if a.data.is_empty() {
        return Err(Error::invalid("PSNR of empty images"));
    }
    let mse = a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.data.len() as f64;
    Ok(if mse == 0.0 { f64::INFINITY } else { -10.0 * mse.log10() })
}

/// Intersection over union of `alpha >= threshold` and `mask >= 0.5`.
/// Two empty masks agree perfectly.
pub fn mask_iou(alpha: &Image, threshold: f64, mask: &Image) -> Result<f64> {
    alpha.check_shape(mask)?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (a, m) in alpha.data.iter().zip(&mask.data) {
        let (p, q) = (*a >= threshold, *m >= 0.5);
        inter += (p && q) as usize;
        union += (p || q) as usize;
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// Reconstruction quality averaged over frames.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub frames: usize,
    /// Mean per-frame PSNR (dB); `null` in JSON when every frame is exact.
    pub psnr: f64,
    pub ssim: f64,
    /// Mean per-frame mask IoU by entity.
    pub iou: BTreeMap<String, f64>,
}

/// Renders `model` at each frame and compares against its image and masks.
pub fn evaluate(model: &Model, frames: &[Frame], background: [f64; 3], settings: &RenderSettings) -> Result<EvalReport> {
    if frames.is_empty() {
        return Err(Error::invalid("no frames to evaluate"));
    }
    let names = model.names();
    let (mut p, mut s) = (0.0, 0.0);
    let mut iou = vec![0.0; names.len()];
    for f in frames {
        if f.masks.len() != names.len() {
            return Err(Error::dim(format!("frame has {} masks for {} entities", f.masks.len(), names.len())));
        }
        let out = model.render(&f.pose, &f.camera, background, settings)?;
        p += psnr(&out.color, &f.image)?;
        s += ssim(&out.color, &f.image, &SsimParams::default())?;
        for (e, v) in iou.iter_mut().enumerate() {
            *v += mask_iou(&out.entity_alpha[e], MASK_THRESHOLD, &f.masks[e])?;
        }
    }
    let n = frames.len() as f64;
    Ok(EvalReport {
        frames: frames.len(),
        psnr: p / n,
        ssim: s / n,
        iou: names.into_iter().zip(iou.into_iter().map(|v| v / n)).collect(),
    })
}

/// Garment-on-body contact at one pose.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerContact {
    /// Collision loss summed over garments.
    pub collision: f64,
    /// Smallest signed clearance over garments; `None` when no body vertex
    /// lies within `radius` of any garment.
    pub min_clearance: Option<f64>,
}

/// Poses `body` (canonical vertices with their skinning weights) and every
/// garment of `model`, then measures how far garments sit outside the body.
pub fn layer_contact(
    model: &Model,
    body: (&[Vec3], &SkinningWeights),
    pose: &Pose,
    margin: f64,
    radius: Option<f64>,
) -> Result<LayerContact> {
    let bones = model.bones(pose)?;
    let surface = deform_points(body.0, body.1, &bones)?;
    let mut out = LayerContact { collision: 0.0, min_clearance: None };
    for e in model.entities.iter().skip(1) {
        let (posed, _) = deform_gaussians(&e.set, &e.weights, &bones)?;
        out.collision += collision_loss(&surface, &posed.means, &bones.joints, margin, radius)?.0;
        for c in clearances(&surface, &posed.means, &bones.joints, radius) {
            out.min_clearance = Some(out.min_clearance.map_or(c, |m: f64| m.min(c)));
        }
    }
    Ok(out)
}

/// Forward render timing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenderBench {
    pub gaussians: usize,
    pub width: usize,
    pub height: usize,
    pub threads: usize,
    /// Median wall time of one forward render (milliseconds).
    pub median_ms: f64,
    pub runs: usize,
}

/// Times `runs` forward renders of `n` random Gaussians on `threads` worker threads.
pub fn bench_render(n: usize, width: usize, height: usize, threads: usize, runs: usize, seed: u64) -> Result<RenderBench> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut set = GaussianSet::empty("bench", 0);
    for _ in 0..n {
        let mean = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-0.5..0.5));
        let q = Quat::from_fn(|_, _| rng.random_range(-1.0..1.0));
        let ls = Vec3::from_fn(|_, _| rng.random_range(-5.0..-3.5));
        let rgb: Vec<f64> = (0..3).map(|_| sh::dc_for_rgb(rng.random_range(0.1..0.9))).collect();
        set.push(mean, q, ls, rng.random_range(-1.0..3.0), &rgb);
    }
    set.normalize_quats();
    let scene = PosedGaussians::from_set(&set);
    let cam = Camera::look_at(Vec3::new(0.0, 0.0, -3.0), Vec3::zeros(), Vec3::y(), 1.2 * width as f64, width, height)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    let settings = RenderSettings::default();
    let mut times = pool.install(|| -> Result<Vec<f64>> {
        render(&scene, &cam, [0.0; 3], &settings)?;
        (0..runs.max(1))
            .map(|_| {
                let t = Instant::now();
                render(&scene, &cam, [0.0; 3], &settings)?;
                Ok(t.elapsed().as_secs_f64() * 1e3)
            })
            .collect()
    })?;
    times.sort_by(f64::total_cmp);
    Ok(RenderBench { gaussians: n, width, height, threads: threads.max(1), median_ms: times[times.len() / 2], runs: times.len() })
}

/// Final report of a run, written as JSON.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub held_out: Option<EvalReport>,
    pub train: Option<EvalReport>,
    /// Gaussians per entity at the end of the run.
    pub gaussians: BTreeMap<String, usize>,
    pub iterations: u64,
    pub final_loss: Option<f64>,
    /// Smallest signed garment-to-body clearance (meters) at the first frame.
    pub min_clearance: Option<f64>,
    pub render_bench: Option<RenderBench>,
    pub wall_seconds: f64,
    pub available_threads: usize,
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics serialize")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square(w: usize, x0: usize, x1: usize, y0: usize, y1: usize) -> Image {
        let mut m = Image::new(w, w, 1);
        for y in y0..y1 {
            for x in x0..x1 {
                *m.at_mut(x, y, 0) = 1.0;
            }
        }
        m
    }

    #[test]
    fn psnr_cases() {
        let a = Image::filled(4, 4, 3, 0.3);
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        let b = Image::filled(4, 4, 3, 0.4);
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
        assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
        assert_eq!(psnr(&Image::filled(2, 2, 3, 0.0), &Image::filled(2, 2, 3, 1.0)).unwrap(), 0.0);
    }

    #[test]
    fn iou_cases() {
        let a = square(8, 0, 4, 0, 4);
        assert_eq!(mask_iou(&a, 0.5, &a).unwrap(), 1.0);
        assert_eq!(mask_iou(&a, 0.5, &square(8, 4, 8, 4, 8)).unwrap(), 0.0);
        // Two 4x4 squares overlapping in a 4x2 strip: 8 / 24.
        let b = square(8, 0, 4, 2, 6);
        assert!((mask_iou(&a, 0.5, &b).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(mask_iou(&b, 0.5, &a).unwrap(), mask_iou(&a, 0.5, &b).unwrap());
    }

    #[test]
    fn bench_reports_shape() {
        let b = bench_render(200, 32, 24, 1, 2, 0).unwrap();
        assert_eq!((b.gaussians, b.width, b.height, b.runs), (200, 32, 24, 2));
        assert!(b.median_ms >= 0.0);
    }
}
