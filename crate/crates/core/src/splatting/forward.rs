use nalgebra::Matrix2x3;
use rayon::prelude::*;

use super::{projection_jacobian, Camera, RenderSettings};
use crate::error::{Error, Result};
use crate::gaussians::{sh, PosedGaussians};
use crate::math::{self, Mat3, Vec3};
use crate::raster::Image;

/// Everything a Gaussian needs on screen, plus the intermediate values the
/// backward pass chains through.
#[derive(Clone, Debug)]
pub(crate) struct Projected {
    pub visible: bool,
    pub uv: [f64; 2],
    pub cam: Vec3,
    pub jw: Matrix2x3<f64>,
    pub cov3d: Mat3,
    pub conic: [f64; 3],
    pub opacity: f64,
    /// Pre-clamp radiance.
    pub color_raw: [f64; 3],
    pub view_dir: Vec3,
    pub view_dist: f64,
}

impl Projected {
    fn culled() -> Self {
        Self {
            visible: false,
            uv: [0.0; 2],
            cam: Vec3::zeros(),
            jw: Matrix2x3::zeros(),
            cov3d: Mat3::zeros(),
            conic: [0.0; 3],
            opacity: 0.0,
            color_raw: [0.0; 3],
            view_dir: Vec3::zeros(),
            view_dist: 0.0,
        }
    }

    pub fn color(&self) -> [f64; 3] {
        self.color_raw.map(|c| c.max(0.0))
    }
}

/// Compact per-tile copy of the values the inner loop reads.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Splat {
    pub u: f64,
    pub v: f64,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub opacity: f64,
    pub color: [f64; 3],
    pub depth: f64,
    pub entity: u16,
}

impl Splat {
    #[inline]
    pub fn mahalanobis(&self, px: f64, py: f64) -> (f64, f64, f64) {
        let dx = px - self.u;
        let dy = py - self.v;
        (self.a * dx * dx + 2.0 * self.b * dx * dy + self.c * dy * dy, dx, dy)
    }
}

/// Rendered image and coverage maps.
#[derive(Clone, Debug)]
pub struct RenderOutput {
    pub color: Image,
    /// Accumulated opacity of everything drawn.
    pub alpha: Image,
    /// Accumulated opacity per entity, indexed like `entity_names`.
    pub entity_alpha: Vec<Image>,
    pub entity_names: Vec<String>,
    /// Number of Gaussians composited into each pixel.
    pub contributors: Vec<u32>,
    /// Alpha-weighted camera depth.
    pub depth: Image,
}

/// Forward state retained for [`super::render_backward`].
#[derive(Clone, Debug)]
pub struct RenderCache {
    pub(crate) projected: Vec<Projected>,
    pub(crate) tiles: Vec<Vec<u32>>,
    pub(crate) final_t: Vec<f64>,
    pub(crate) last: Vec<u32>,
    pub(crate) background: [f64; 3],
    pub(crate) settings: RenderSettings,
    pub(crate) camera: Camera,
    pub(crate) entity_count: usize,
}

impl RenderCache {
    pub fn gaussian_count(&self) -> usize {
        self.projected.len()
    }

    pub fn visible(&self) -> Vec<bool> {
        self.projected.iter().map(|p| p.visible).collect()
    }

    pub(crate) fn tile_rect(&self, t: usize) -> (usize, usize, usize, usize) {
        tile_rect(&self.camera, &self.settings, t)
    }

    pub(crate) fn splats(&self, scene: &PosedGaussians, t: usize) -> Vec<Splat> {
        self.tiles[t].iter().map(|&g| splat_of(&self.projected[g as usize], scene, g as usize)).collect()
    }
}

fn tile_rect(camera: &Camera, settings: &RenderSettings, t: usize) -> (usize, usize, usize, usize) {
    let ts = settings.tile_size;
    let tx = camera.width.div_ceil(ts);
    let (x0, y0) = ((t % tx) * ts, (t / tx) * ts);
    (x0, y0, (x0 + ts).min(camera.width), (y0 + ts).min(camera.height))
}

fn splat_of(p: &Projected, scene: &PosedGaussians, g: usize) -> Splat {
    Splat {
        u: p.uv[0],
        v: p.uv[1],
        a: p.conic[0],
        b: p.conic[1],
        c: p.conic[2],
        opacity: p.opacity,
        color: p.color(),
        depth: p.cam.z,
        entity: scene.entity[g],
    }
}

fn check_scene(scene: &PosedGaussians) -> Result<()> {
    let n = scene.len();
    let stride = scene.sh_stride();
    if scene.dir_rots.len() != n
        || scene.cov_rots.len() != n
        || scene.log_scales.len() != n
        || scene.opacity_logits.len() != n
        || scene.entity.len() != n
        || scene.sh.len() != n * stride
    {
        return Err(Error::dim("posed Gaussian arrays disagree on length"));
    }
    if scene.entity.iter().any(|&e| e as usize >= scene.entity_count()) {
        return Err(Error::invalid("entity id without a name"));
    }
    let bad = |what: &'static str, i: Option<usize>| i.map_or(Ok(()), |index| Err(Error::NonFinite { what, index }));
    bad("mean", scene.means.iter().position(|m| !m.iter().all(|v| v.is_finite())))?;
    bad("rotation", (0..n).find(|&i| !scene.dir_rots[i].iter().chain(scene.cov_rots[i].iter()).all(|v| v.is_finite())))?;
    bad("log-scale", scene.log_scales.iter().position(|s| !s.iter().all(|v| v.is_finite())))?;
    bad("opacity", scene.opacity_logits.iter().position(|v| !v.is_finite()))?;
    bad("radiance coefficient", scene.sh.iter().position(|v| !v.is_finite()).map(|p| p / stride.max(1)))?;
    Ok(())
}

fn project_one(scene: &PosedGaussians, i: usize, camera: &Camera, settings: &RenderSettings) -> (Projected, [f64; 2]) {
    let mean = scene.means[i];
    let cam = camera.to_camera(&mean);
    if cam.z <= camera.near {
        return (Projected::culled(), [0.0; 2]);
    }
    let iz = 1.0 / cam.z;
    let uv = [camera.fx * cam.x * iz + camera.cx, camera.fy * cam.y * iz + camera.cy];
    let jw = projection_jacobian(&cam, camera.fx, camera.fy) * camera.rotation();
    let cov3d = scene.covariance(i);
    let cov2d = jw * cov3d * jw.transpose();
    let (a, b, c) = (cov2d[(0, 0)] + settings.dilation, cov2d[(0, 1)], cov2d[(1, 1)] + settings.dilation);
    let det = a * c - b * b;
    if !(det > 0.0) || !(a > 0.0) {
        return (Projected::culled(), [0.0; 2]);
    }
    let extent = [settings.footprint_sigma * a.sqrt(), settings.footprint_sigma * c.sqrt()];
    let offset = mean - camera.center();
    let view_dist = offset.norm();
    let view_dir = if view_dist > 0.0 { offset / view_dist } else { Vec3::z() };
    let coeffs = scene.sh_row(i);
    let k = coeffs.len() / 3;
    let mut basis = [0.0; 16];
    sh::basis(&(scene.dir_rots[i].transpose() * view_dir), &mut basis[..k]);
    let mut color_raw = [0.5; 3];
    for (j, bj) in basis[..k].iter().enumerate() {
        for ch in 0..3 {
            color_raw[ch] += bj * coeffs[3 * j + ch];
        }
    }
    let p = Projected {
        visible: true,
        uv,
        cam,
        jw,
        cov3d,
        conic: [c / det, -b / det, a / det],
        opacity: math::sigmoid(scene.opacity_logits[i]),
        color_raw,
        view_dir,
        view_dist,
    };
    (p, extent)
}

/// Inclusive pixel range covered by `[lo, hi]`, clipped to `[0, size)`.
fn pixel_span(lo: f64, hi: f64, size: usize) -> Option<(usize, usize)> {
    let first = lo.ceil().max(0.0);
    let last = hi.floor().min(size as f64 - 1.0);
    (first <= last).then_some((first as usize, last as usize))
}

/// Renders `scene` from `camera` over a solid background.
pub fn render(
    scene: &PosedGaussians,
    camera: &Camera,
    background: [f64; 3],
    settings: &RenderSettings,
) -> Result<(RenderOutput, RenderCache)> {
    camera.validate()?;
    check_scene(scene)?;
    if settings.tile_size == 0 {
        return Err(Error::invalid("tile size must be positive"));
    }
    let n = scene.len();
    let (w, h) = (camera.width, camera.height);
    let ts = settings.tile_size;
    let (tx, ty) = (w.div_ceil(ts), h.div_ceil(ts));

    let projected: Vec<(Projected, [f64; 2])> =
        (0..n).into_par_iter().map(|i| project_one(scene, i, camera, settings)).collect();

    let mut order: Vec<usize> = (0..n).filter(|&i| projected[i].0.visible).collect();
    order.sort_by(|&i, &j| projected[i].0.cam.z.total_cmp(&projected[j].0.cam.z).then(i.cmp(&j)));
    let mut tiles: Vec<Vec<u32>> = vec![Vec::new(); tx * ty];
    let mut visible = vec![false; n];
    for &i in &order {
        let (p, ext) = &projected[i];
        let xs = pixel_span(p.uv[0] - ext[0], p.uv[0] + ext[0], w);
        let ys = pixel_span(p.uv[1] - ext[1], p.uv[1] + ext[1], h);
        if let (Some((x0, x1)), Some((y0, y1))) = (xs, ys) {
            visible[i] = true;
            for ty_ in y0 / ts..=y1 / ts {
                for tx_ in x0 / ts..=x1 / ts {
                    tiles[ty_ * tx + tx_].push(i as u32);
                }
            }
        }
    }
    let projected: Vec<Projected> = projected
        .into_iter()
        .zip(&visible)
        .map(|((p, _), &v)| if v { p } else { Projected::culled() })
        .collect();

    let ne = scene.entity_count();
    let mut cache = RenderCache {
        projected,
        tiles,
        final_t: vec![1.0; w * h],
        last: vec![0; w * h],
        background,
        settings: settings.clone(),
        camera: camera.clone(),
        entity_count: ne,
    };

    let fp2 = settings.footprint_sigma * settings.footprint_sigma;
    let tile_outs: Vec<TileOut> = (0..tx * ty)
        .into_par_iter()
        .map(|t| {
            let (x0, y0, x1, y1) = cache.tile_rect(t);
            let splats = cache.splats(scene, t);
            let mut out = TileOut::new((x1 - x0) * (y1 - y0), ne);
            let mut ent = vec![0.0; ne];
            for y in y0..y1 {
                for x in x0..x1 {
                    let p = (y - y0) * (x1 - x0) + (x - x0);
                    let (px, py) = (x as f64, y as f64);
                    let mut t_ = 1.0;
                    let mut rgb = [0.0; 3];
                    let mut total = 0.0;
                    let mut depth = 0.0;
                    let mut count = 0u32;
                    let mut last = 0u32;
                    ent.iter_mut().for_each(|e| *e = 0.0);
                    for (k, s) in splats.iter().enumerate() {
                        let (d2, _, _) = s.mahalanobis(px, py);
                        if d2 > fp2 {
                            continue;
                        }
                        let alpha = (s.opacity * (-0.5 * d2).exp()).min(settings.alpha_max);
                        let next = t_ * (1.0 - alpha);
                        if next < settings.min_transmittance {
                            break;
                        }
                        let wgt = alpha * t_;
                        for c in 0..3 {
                            rgb[c] += wgt * s.color[c];
                        }
                        total += wgt;
                        ent[s.entity as usize] += wgt;
                        depth += wgt * s.depth;
                        t_ = next;
                        count += 1;
                        last = k as u32 + 1;
                    }
                    for c in 0..3 {
                        out.color[3 * p + c] = rgb[c] + t_ * background[c];
                    }
                    out.alpha[p] = total;
                    for e in 0..ne {
                        out.entity_alpha[e * out.alpha.len() + p] = ent[e];
                    }
                    out.depth[p] = depth;
                    out.count[p] = count;
                    out.final_t[p] = t_;
                    out.last[p] = last;
                }
            }
            out
        })
        .collect();

    let mut color = Image::new(w, h, 3);
    let mut alpha = Image::new(w, h, 1);
    let mut entity_alpha = vec![Image::new(w, h, 1); ne];
    let mut depth = Image::new(w, h, 1);
    let mut contributors = vec![0u32; w * h];
    for (t, out) in tile_outs.iter().enumerate() {
        let (x0, y0, x1, y1) = cache.tile_rect(t);
        let tw = x1 - x0;
        let np = out.alpha.len();
        for y in y0..y1 {
            for x in x0..x1 {
                let p = (y - y0) * tw + (x - x0);
                let q = y * w + x;
                color.data[3 * q..3 * q + 3].copy_from_slice(&out.color[3 * p..3 * p + 3]);
                alpha.data[q] = out.alpha[p];
                for (e, img) in entity_alpha.iter_mut().enumerate() {
                    img.data[q] = out.entity_alpha[e * np + p];
                }
                depth.data[q] = out.depth[p];
                contributors[q] = out.count[p];
                cache.final_t[q] = out.final_t[p];
                cache.last[q] = out.last[p];
            }
        }
    }
    let output = RenderOutput {
        color,
        alpha,
        entity_alpha,
        entity_names: scene.entity_names.clone(),
        contributors,
        depth,
    };
    Ok((output, cache))
}

struct TileOut {
    color: Vec<f64>,
    alpha: Vec<f64>,
    entity_alpha: Vec<f64>,
    depth: Vec<f64>,
    count: Vec<u32>,
    final_t: Vec<f64>,
    last: Vec<u32>,
}

impl TileOut {
    fn new(np: usize, ne: usize) -> Self {
        Self {
            color: vec![0.0; 3 * np],
            alpha: vec![0.0; np],
            entity_alpha: vec![0.0; ne * np],
            depth: vec![0.0; np],
            count: vec![0; np],
            final_t: vec![1.0; np],
            last: vec![0; np],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussians::GaussianSet;
    use crate::math::{Mat4, Quat};
    use approx::assert_relative_eq;

    fn camera(w: usize, h: usize) -> Camera {
        Camera::new(Mat4::identity(), [100.0, 100.0, w as f64 / 2.0, h as f64 / 2.0], w, h, 0.01).unwrap()
    }

    #[test]
    fn empty_scene_is_background() {
        let scene = PosedGaussians::from_set(&GaussianSet::empty("body", 0));
        let (out, _) = render(&scene, &camera(20, 12), [0.1, 0.2, 0.3], &RenderSettings::default()).unwrap();
        assert_eq!(out.color, Image::solid(20, 12, [0.1, 0.2, 0.3]));
        assert!(out.alpha.data.iter().all(|a| *a == 0.0));
        assert!(out.contributors.iter().all(|c| *c == 0));
    }

    #[test]
    fn single_centered_gaussian() {
        let mut set = GaussianSet::empty("body", 0);
        let white = sh::dc_for_rgb(1.0);
        set.push(Vec3::new(0.0, 0.0, 2.0), Quat::new(1.0, 0.0, 0.0, 0.0), Vec3::repeat(0.02f64.ln()), math::logit(0.8), &[white; 3]);
        let scene = PosedGaussians::from_set(&set);
        let bg = [0.2, 0.4, 0.6];
        let (out, _) = render(&scene, &camera(32, 32), bg, &RenderSettings::default()).unwrap();
        for c in 0..3 {
            assert_relative_eq!(out.color.at(16, 16, c), 0.8 + 0.2 * bg[c], epsilon = 1e-12);
        }
        assert_relative_eq!(out.alpha.at(16, 16, 0), 0.8, epsilon = 1e-12);
        assert_eq!(out.contributors[16 * 32 + 16], 1);
    }

    #[test]
    fn zero_width_camera_is_rejected() {
        let scene = PosedGaussians::from_set(&GaussianSet::empty("body", 0));
        let mut cam = camera(8, 8);
        cam.width = 0;
        assert!(render(&scene, &cam, [0.0; 3], &RenderSettings::default()).is_err());
    }

    #[test]
    fn nan_attribute_is_indexed() {
        let mut set = GaussianSet::empty("body", 0);
        for i in 0..3 {
            set.push(Vec3::new(0.0, 0.0, 2.0 + i as f64), Quat::new(1.0, 0.0, 0.0, 0.0), Vec3::repeat(-3.0), 0.0, &[0.0; 3]);
        }
        set.opacity_logits[2] = f64::NAN;
        let scene = PosedGaussians::from_set(&set);
        match render(&scene, &camera(8, 8), [0.0; 3], &RenderSettings::default()) {
            Err(Error::NonFinite { what: "opacity", index: 2 }) => {}
            other => panic!("unexpected {:?}", other.map(|_| ())),
        }
    }
}
