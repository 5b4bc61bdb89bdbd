use std::fmt;
use std::fs::File;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Moments, TrainConfig};
use crate::error::{Error, Result};
use crate::gaussians::{densify_and_prune, DensifyStats, GaussianGrads, PosedGrads};
use crate::geometry::{deform_backward, deform_gaussians, deform_points, BoneTransforms, Pose, SkinningWeights};
use crate::io::{save_checkpoint, Checkpoint};
use crate::knn::knn_graph;
use crate::losses::{
    collision_loss, gaussian_reg_loss, iso_loss, mask_loss, recon_l1, s3im, total_isolation, total_joint, LossBreakdown,
    LossWeights, S3imParams,
};
use crate::math::{self, Vec3};
use crate::model::Model;
use crate::raster::Image;
use crate::splatting::{render, render_backward, Camera, RenderGrads};

/// One supervised view: the image, a coverage mask per entity (in model
/// order) and the camera and pose it was taken with.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub camera: Camera,
    pub pose: Pose,
    pub image: Image,
    pub masks: Vec<Image>,
}

/// Training views plus the optional canonical body surface (vertices and
/// their skinning weights) that garments are kept outside of. Without a
/// surface, the body entity's Gaussian centres are used instead.
#[derive(Clone, Copy, Debug)]
pub struct TrainData<'a> {
    pub frames: &'a [Frame],
    pub body_surface: Option<(&'a [Vec3], &'a SkinningWeights)>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Isolation,
    Joint,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Isolation => "isolation",
            Phase::Joint => "joint",
        })
    }
}

/// One row of the loss log.
#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub phase: Phase,
    pub iteration: u64,
    pub epoch: usize,
    pub frame: usize,
    pub loss: LossBreakdown,
    pub gaussians: usize,
}

/// Adam moments for every learnable array of one entity.
#[derive(Clone, Debug, PartialEq)]
pub struct EntityOptim {
    pub means: Moments,
    pub quats: Moments,
    pub log_scales: Moments,
    pub opacity: Moments,
    pub sh: Moments,
    pub delta: Moments,
    pub step: u64,
}

impl EntityOptim {
    fn for_entity(n: usize, stride: usize, joints: usize) -> Self {
        Self {
            means: Moments::zeros(3 * n),
            quats: Moments::zeros(4 * n),
            log_scales: Moments::zeros(3 * n),
            opacity: Moments::zeros(n),
            sh: Moments::zeros(stride * n),
            delta: Moments::zeros(joints * n),
            step: 0,
        }
    }

    fn remap(&self, origin: &[usize], fresh: &[bool], stride: usize, joints: usize) -> Self {
        Self {
            means: self.means.remap(3, origin, fresh),
            quats: self.quats.remap(4, origin, fresh),
            log_scales: self.log_scales.remap(3, origin, fresh),
            opacity: self.opacity.remap(1, origin, fresh),
            sh: self.sh.remap(stride, origin, fresh),
            delta: self.delta.remap(joints, origin, fresh),
            step: self.step,
        }
    }
}

/// Summary of one phase.
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseReport {
    pub phase: Phase,
    pub iterations: u64,
    /// Mean per-iteration loss over the last epoch.
    pub final_loss: LossBreakdown,
    pub counts_before: Vec<usize>,
    pub counts_after: Vec<usize>,
    /// Phase-local iteration numbers at which densify-and-prune ran.
    pub densify_events: Vec<u64>,
}

/// Model, optimizer state and logs of a run.
pub struct TrainState {
    pub model: Model,
    pub optim: Vec<EntityOptim>,
    /// Iterations completed over all phases.
    pub iteration: u64,
    pub history: Vec<LogRow>,
    pub config: TrainConfig,
    pub weights: LossWeights,
    out_dir: Option<PathBuf>,
    csv: Option<csv::Writer<File>>,
}

struct Step<'a> {
    frame: &'a Frame,
    bones: &'a BoneTransforms,
    progress: f64,
    seed: u64,
}

impl TrainState {
    pub fn new(model: Model, config: TrainConfig, weights: LossWeights) -> Result<Self> {
        model.validate()?;
        config.validate()?;
        weights.validate()?;
        let joints = model.skeleton.joint_count();
        let optim =
            model.entities.iter().map(|e| EntityOptim::for_entity(e.set.len(), e.set.sh_stride(), joints)).collect();
        Ok(Self { model, optim, iteration: 0, history: Vec::new(), config, weights, out_dir: None, csv: None })
    }

    /// Writes `loss.csv` and checkpoints under `dir`.
    pub fn with_output(mut self, dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        let mut w = csv::Writer::from_path(dir.join("loss.csv")).map_err(csv_err)?;
        w.write_record(LOSS_COLUMNS).map_err(csv_err)?;
        w.flush()?;
        self.csv = Some(w);
        self.out_dir = Some(dir.to_path_buf());
        Ok(self)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint { model: self.model.clone(), iteration: self.iteration }
    }

    /// Saves the current model as `name` in the output directory, if any.
    pub fn save(&self, name: &str) -> Result<Option<PathBuf>> {
        let Some(dir) = &self.out_dir else { return Ok(None) };
        let path = dir.join(name);
        save_checkpoint(&path, &self.checkpoint())?;
        Ok(Some(path))
    }

    fn check_frames(&self, data: &TrainData) -> Result<()> {
        if data.frames.is_empty() {
            return Err(Error::invalid("no training frames"));
        }
        let ne = self.model.entities.len();
        for (f, fr) in data.frames.iter().enumerate() {
            let (w, h) = (fr.camera.width, fr.camera.height);
            if fr.image.width != w || fr.image.height != h || fr.image.channels != 3 {
                return Err(Error::dim(format!("frame {f}: image does not match its {w}x{h} camera")));
            }
            if fr.masks.len() != ne || fr.masks.iter().any(|m| m.width != w || m.height != h || m.channels != 1) {
                return Err(Error::dim(format!("frame {f}: needs one {w}x{h} mask per entity ({ne})")));
            }
        }
        if let Some((v, wts)) = data.body_surface {
            if wts.len() != v.len() || wts.joints != self.model.skeleton.joint_count() {
                return Err(Error::dim("body surface weights do not match its vertices or the skeleton"));
            }
        }
        Ok(())
    }

    fn epoch_order(&self, phase: Phase, epoch: usize, frames: usize) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(self.config.seed, phase as u64 + 1, epoch as u64));
        let mut order: Vec<usize> = (0..frames).collect();
        order.shuffle(&mut rng);
        order.truncate(self.config.frames_per_epoch.unwrap_or(frames).min(frames));
        order
    }

    fn s3im_params(&self, frame: &Frame) -> S3imParams {
        let mut p = self.weights.s3im_params();
        p.patch = p.patch.min(frame.camera.width).min(frame.camera.height);
        p.kernel = p.kernel.min(p.patch);
        p
    }

    fn graphs(&self) -> Vec<Vec<Vec<usize>>> {
        self.model
            .entities
            .iter()
            .map(|e| knn_graph(&(0..e.set.len()).map(|i| e.set.mean(i)).collect::<Vec<_>>(), self.weights.knn))
            .collect()
    }

    /// Each entity is rendered alone and fitted to its masked target.
    /// Densify-and-prune runs every `densify_interval` iterations.
    pub fn run_isolation(&mut self, data: &TrainData) -> Result<PhaseReport> {
        self.check_frames(data)?;
        let cfg = self.config.clone();
        let bones = frame_bones(&self.model, data.frames)?;
        let bg = cfg.background;
        let targets: Vec<Vec<Image>> =
            data.frames.iter().map(|f| f.masks.iter().map(|m| f.image.masked(m, bg)).collect()).collect();
        let counts_before = self.counts();
        let per_epoch = self.epoch_order(Phase::Isolation, 0, data.frames.len()).len();
        let total = (cfg.isolation_epochs * per_epoch) as u64;
        let mut stats: Vec<DensifyStats> = self.model.entities.iter().map(|e| DensifyStats::new(e.set.len())).collect();
        let mut graphs = self.graphs();
        let mut local = 0u64;
        let mut densify_events = Vec::new();
        let mut last_epoch = LossBreakdown::default();
        for epoch in 0..cfg.isolation_epochs {
            let mut epoch_sum = LossBreakdown::default();
            for f in self.epoch_order(Phase::Isolation, epoch, data.frames.len()) {
                let step = Step {
                    frame: &data.frames[f],
                    bones: &bones[f],
                    progress: local as f64 / total.max(1) as f64,
                    seed: mix(cfg.seed, self.iteration, 0x5_31),
                };
                let mut per_entity = Vec::with_capacity(self.model.entities.len());
                for e in 0..self.model.entities.len() {
                    per_entity.push(self.isolation_entity(e, &step, &targets[f][e], &graphs[e], &mut stats[e])?);
                }
                let loss = total_isolation(&per_entity, &self.weights);
                local += 1;
                self.finish_iteration(Phase::Isolation, epoch, f, loss.clone())?;
                epoch_sum.add(&loss);

                if local % cfg.densify_interval == 0 && cfg.densify.until.is_none_or(|u| local <= u) {
                    self.densify(&mut stats, local)?;
                    graphs = self.graphs();
                    densify_events.push(local);
                }
            }
            last_epoch = scale_breakdown(&epoch_sum, per_epoch);
        }
        Ok(PhaseReport {
            phase: Phase::Isolation,
            iterations: local,
            final_loss: last_epoch,
            counts_before,
            counts_after: self.counts(),
            densify_events,
        })
    }

    /// All entities are composited and refined together with isometry and
    /// collision terms; Gaussian counts stay fixed.
    pub fn run_joint(&mut self, data: &TrainData) -> Result<PhaseReport> {
        self.check_frames(data)?;
        let cfg = self.config.clone();
        let bones = frame_bones(&self.model, data.frames)?;
        let counts_before = self.counts();
        let per_epoch = self.epoch_order(Phase::Joint, 0, data.frames.len()).len();
        let total = (cfg.joint_epochs * per_epoch) as u64;
        let graphs = self.graphs();
        let mut local = 0u64;
        let mut last_epoch = LossBreakdown::default();
        for epoch in 0..cfg.joint_epochs {
            let mut epoch_sum = LossBreakdown::default();
            for f in self.epoch_order(Phase::Joint, epoch, data.frames.len()) {
                let step = Step {
                    frame: &data.frames[f],
                    bones: &bones[f],
                    progress: local as f64 / total.max(1) as f64,
                    seed: mix(cfg.seed, self.iteration, 0x10_17),
                };
                let loss = self.joint_iteration(&step, &graphs, data.body_surface)?;
                local += 1;
                self.finish_iteration(Phase::Joint, epoch, f, loss.clone())?;
                epoch_sum.add(&loss);
            }
            last_epoch = scale_breakdown(&epoch_sum, per_epoch);
        }
        Ok(PhaseReport {
            phase: Phase::Joint,
            iterations: local,
            final_loss: last_epoch,
            counts_before,
            counts_after: self.counts(),
            densify_events: Vec::new(),
        })
    }

    fn counts(&self) -> Vec<usize> {
        self.model.entities.iter().map(|e| e.set.len()).collect()
    }

    fn finish_iteration(&mut self, phase: Phase, epoch: usize, frame: usize, loss: LossBreakdown) -> Result<()> {
        self.iteration += 1;
        let row = LogRow { phase, iteration: self.iteration, epoch, frame, loss, gaussians: self.model.gaussian_count() };
        if let Some(w) = self.csv.as_mut() {
            let l = &row.loss;
            w.write_record(&[
                row.phase.to_string(),
                row.iteration.to_string(),
                row.epoch.to_string(),
                row.frame.to_string(),
                l.recon.to_string(),
                l.mask.to_string(),
                l.s3im.to_string(),
                l.reg.to_string(),
                l.iso.to_string(),
                l.collision.to_string(),
                l.total.to_string(),
                row.gaussians.to_string(),
            ])
            .map_err(csv_err)?;
        }
        let log = self.config.log_interval;
        if log > 0 && self.iteration % log == 0 {
            eprintln!(
                "[{phase}] iter {} epoch {epoch} loss {:.6} gaussians {}",
                self.iteration, row.loss.total, row.gaussians
            );
            if let Some(w) = self.csv.as_mut() {
                w.flush()?;
            }
        }
        self.history.push(row);
        if let Some(every) = self.config.checkpoint_interval {
            if self.iteration % every == 0 {
                self.save(&format!("ckpt_{:08}.ckpt", self.iteration))?;
            }
        }
        Ok(())
    }

    /// Flushes the loss log.
    pub fn flush(&mut self) -> Result<()> {
        if let Some(w) = self.csv.as_mut() {
            w.flush()?;
        }
        Ok(())
    }

    fn diverged(&self, detail: String) -> Error {
        // Best effort: the diagnostic checkpoint must not mask the real error.
        let _ = self.save("diverged.ckpt");
        Error::Diverged { iteration: self.iteration + 1, detail }
    }

    fn isolation_entity(
        &mut self,
        e: usize,
        step: &Step,
        target: &Image,
        graph: &[Vec<usize>],
        stats: &mut DensifyStats,
    ) -> Result<LossBreakdown> {
        let w = self.weights.clone();
        let cfg = &self.config;
        let ent = &self.model.entities[e];
        let (posed, dcache) = deform_gaussians(&ent.set, &ent.weights, step.bones)?;
        let (out, rcache) = render(&posed, &step.frame.camera, cfg.background, &cfg.render)?;

        let mut loss = LossBreakdown::default();
        let (recon, mut color) = recon_l1(&out.color, target)?;
        loss.recon = recon;
        if w.s3im > 0.0 {
            let (v, g) = s3im(&out.color, target, &self.s3im_params(step.frame), mix(step.seed, e as u64, 3))?;
            loss.s3im = v;
            axpy(&mut color.data, w.s3im, &g.data);
        }
        let mut up = RenderGrads::color_only(color.data);
        if w.mask > 0.0 {
            let (v, mut g) = mask_loss(&[&out.entity_alpha[0]], &[&step.frame.masks[e]])?;
            loss.mask = v;
            g[0].data.iter_mut().for_each(|x| *x *= w.mask);
            up.entity_alpha = vec![std::mem::take(&mut g[0].data)];
        }
        let pg = render_backward(&posed, &rcache, &up)?;
        stats.record(&pg.mean2d_ndc, &pg.visible);
        let dg = deform_backward(&ent.set, &ent.weights, step.bones, &dcache, &pg)?;
        let mut grads = dg.set;
        let mut delta = dg.delta;
        if w.reg > 0.0 {
            let (v, rg) = gaussian_reg_loss(&ent.set, Some(&ent.weights), graph, w.reg_weights, w.reg_scale)?;
            loss.reg = v;
            add_set_grads(&mut grads, &rg.set, w.reg);
            axpy(&mut delta, w.reg, &rg.delta);
        }
        loss.total = loss.recon + w.mask * loss.mask + w.s3im * loss.s3im + w.reg * loss.reg;
        self.apply(e, &grads, &delta, step.progress)?;
        Ok(loss)
    }

    fn joint_iteration(
        &mut self,
        step: &Step,
        graphs: &[Vec<Vec<usize>>],
        body_surface: Option<(&[Vec3], &SkinningWeights)>,
    ) -> Result<LossBreakdown> {
        let w = self.weights.clone();
        let cfg = self.config.clone();
        let frame = step.frame;
        let (scene, caches) = self.model.posed(step.bones)?;
        let (out, rcache) = render(&scene, &frame.camera, cfg.background, &cfg.render)?;

        let mut loss = LossBreakdown::default();
        let (recon, mut color) = recon_l1(&out.color, &frame.image)?;
        loss.recon = recon;
        if w.s3im > 0.0 {
            let (v, g) = s3im(&out.color, &frame.image, &self.s3im_params(frame), step.seed)?;
            loss.s3im = v;
            axpy(&mut color.data, w.s3im, &g.data);
        }
        let mut up = RenderGrads::color_only(color.data);
        if w.mask > 0.0 {
            let alphas: Vec<&Image> = out.entity_alpha.iter().collect();
            let masks: Vec<&Image> = frame.masks.iter().collect();
            let (v, g) = mask_loss(&alphas, &masks)?;
            loss.mask = v;
            up.entity_alpha = g.into_iter().map(|mut m| {
                m.data.iter_mut().for_each(|x| *x *= w.mask);
                m.data
            }).collect();
        }
        let pg = render_backward(&scene, &rcache, &up)?;

        let mut starts = vec![0usize];
        for e in &self.model.entities {
            starts.push(starts.last().unwrap() + e.set.len());
        }
        let collide = w.collision > 0.0 && self.model.entities.len() > 1;
        let body_points: Vec<Vec3> = match (collide, body_surface) {
            (false, _) => Vec::new(),
            (true, Some((v, wts))) => deform_points(v, wts, step.bones)?,
            (true, None) => scene.means[starts[0]..starts[1]].to_vec(),
        };

        for e in 0..self.model.entities.len() {
            let range = starts[e]..starts[e + 1];
            let mut pge: PosedGrads = pg.slice(range.clone());
            let set = &self.model.entities[e].set;
            let n = set.len();
            let mut extra = GaussianGrads::zeros_like(set);

            if w.iso > 0.0 && n > 1 {
                let means = &scene.means[range.clone()];
                let covs: Vec<math::Mat3> = range.clone().map(|i| scene.covariance(i)).collect();
                let ref_means: Vec<Vec3> = (0..n).map(|i| set.mean(i)).collect();
                let ref_covs: Vec<math::Mat3> = (0..n).map(|i| set.covariance(i)).collect();
                let (v, g) = iso_loss(means, &covs, &ref_means, &ref_covs, &graphs[e], w.iso_mu, w.iso_sigma)?;
                loss.iso += v;
                for i in 0..n {
                    let scale = set.scale(i);
                    pge.means[i] += g.means[i] * w.iso;
                    let (d_rot, d_scale) = math::covariance_backward(&scene.cov_rots[starts[e] + i], &scale, &(g.covs[i] * w.iso));
                    pge.cov_rots[i] += d_rot;
                    pge.log_scales[i] += d_scale.component_mul(&scale);

                    for a in 0..3 {
                        extra.means[3 * i + a] += w.iso * g.ref_means[i][a];
                    }
                    let raw = set.raw_quat(i);
                    let (d_rot0, d_scale0) = math::covariance_backward(&set.rotation(i), &scale, &(g.ref_covs[i] * w.iso));
                    let dq = math::raw_quat_backward(&raw, &d_rot0);
                    for a in 0..4 {
                        extra.quats[4 * i + a] += dq[a];
                    }
                    for a in 0..3 {
                        extra.log_scales[3 * i + a] += d_scale0[a] * scale[a];
                    }
                }
            }
            if collide && e > 0 {
                let garment = &scene.means[range.clone()];
                let (v, g) = collision_loss(&body_points, garment, &step.bones.joints, w.collision_margin, w.collision_radius)?;
                loss.collision += v;
                for i in 0..n {
                    pge.means[i] += g.garment[i] * w.collision;
                }
            }
            let ent = &self.model.entities[e];
            let dg = deform_backward(&ent.set, &ent.weights, step.bones, &caches[e], &pge)?;
            let mut grads = dg.set;
            let mut delta = dg.delta;
            add_set_grads(&mut grads, &extra, 1.0);
            if w.reg > 0.0 {
                let (v, rg) = gaussian_reg_loss(&ent.set, Some(&ent.weights), &graphs[e], w.reg_weights, w.reg_scale)?;
                loss.reg += v;
                add_set_grads(&mut grads, &rg.set, w.reg);
                axpy(&mut delta, w.reg, &rg.delta);
            }
            self.apply(e, &grads, &delta, step.progress)?;
        }
        Ok(total_joint(&loss, &w))
    }

    fn apply(&mut self, e: usize, g: &GaussianGrads, delta: &[f64], progress: f64) -> Result<()> {
        let bad = [&g.means, &g.quats, &g.log_scales, &g.opacity_logits, &g.sh]
            .iter()
            .map(|v| v.as_slice())
            .chain(std::iter::once(delta))
            .any(|v| v.iter().any(|x| !x.is_finite()));
        if bad {
            let name = self.model.entities[e].name().to_string();
            return Err(self.diverged(format!("non-finite gradient for entity '{name}'")));
        }
        let lr = self.config.lr.clone();
        let p = self.config.adam.clone();
        let opt = &mut self.optim[e];
        let ent = &mut self.model.entities[e];
        opt.step += 1;
        let t = opt.step;
        opt.means.step(&mut ent.set.means, &g.means, lr.means_at(progress), t, &p)?;
        opt.quats.step(&mut ent.set.quats, &g.quats, lr.quats, t, &p)?;
        opt.log_scales.step(&mut ent.set.log_scales, &g.log_scales, lr.log_scales, t, &p)?;
        opt.opacity.step(&mut ent.set.opacity_logits, &g.opacity_logits, lr.opacity, t, &p)?;
        opt.sh.step(&mut ent.set.sh, &g.sh, lr.sh, t, &p)?;
        opt.delta.step(&mut ent.weights.delta, delta, lr.delta, t, &p)?;
        ent.set.normalize_quats();
        Ok(())
    }

    fn densify(&mut self, stats: &mut [DensifyStats], local: u64) -> Result<()> {
        let joints = self.model.skeleton.joint_count();
        for e in 0..self.model.entities.len() {
            let th = self.config.densify.thresholds(mix(self.config.seed, local, e as u64));
            let ent = &self.model.entities[e];
            let out = densify_and_prune(&ent.set, &stats[e], &th)?;
            let stride = ent.set.sh_stride();
            let weights = ent.weights.select(&out.origin, false);
            self.optim[e] = self.optim[e].remap(&out.origin, &out.fresh, stride, joints);
            let ent = &mut self.model.entities[e];
            ent.set = out.set;
            ent.weights = weights;
            stats[e].reset(ent.set.len());
        }
        Ok(())
    }
}

/// Column names of `loss.csv`.
pub const LOSS_COLUMNS: [&str; 12] =
    ["phase", "iteration", "epoch", "frame", "recon", "mask", "s3im", "reg", "iso", "collision", "total", "gaussians"];

fn frame_bones(model: &Model, frames: &[Frame]) -> Result<Vec<BoneTransforms>> {
    frames.iter().map(|f| model.bones(&f.pose)).collect()
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    y.iter_mut().zip(x).for_each(|(y, x)| *y += a * x);
}

fn add_set_grads(into: &mut GaussianGrads, g: &GaussianGrads, k: f64) {
    axpy(&mut into.means, k, &g.means);
    axpy(&mut into.quats, k, &g.quats);
    axpy(&mut into.log_scales, k, &g.log_scales);
    axpy(&mut into.opacity_logits, k, &g.opacity_logits);
    axpy(&mut into.sh, k, &g.sh);
}

fn scale_breakdown(b: &LossBreakdown, n: usize) -> LossBreakdown {
    let k = 1.0 / n.max(1) as f64;
    LossBreakdown {
        recon: b.recon * k,
        mask: b.mask * k,
        s3im: b.s3im * k,
        reg: b.reg * k,
        iso: b.iso * k,
        collision: b.collision * k,
        total: b.total * k,
    }
}

/// SplitMix64-style combination of seeds and counters.
fn mix(a: u64, b: u64, c: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ c.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
