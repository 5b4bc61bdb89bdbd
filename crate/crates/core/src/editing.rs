//! Post-training edits: recoloring an entity, moving a garment onto another
//! body and rendering pose sequences.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussians::sh;
use crate::geometry::{Pose, Skeleton};
use crate::knn::{knn_graph, PointIndex};
use crate::losses::{clearances, collision_loss, iso_loss};
use crate::math::{Mat3, Vec3};
use crate::model::{Entity, Model};
use crate::raster::Image;
use crate::splatting::{Camera, RenderSettings};
use crate::templates::BodyTemplate;
use crate::training::{AdamParams, Moments};

/// Named colors accepted by [`color_by_name`], as 8-bit RGB.
pub const COLOR_NAMES: &[(&str, [u8; 3])] = &[
    ("black", [0, 0, 0]),
    ("white", [255, 255, 255]),
    ("gray", [128, 128, 128]),
    ("red", [255, 0, 0]),
    ("crimson", [80, 0, 0]),
    ("green", [0, 128, 0]),
    ("blue", [0, 0, 255]),
    ("navy", [0, 0, 128]),
    ("yellow", [255, 255, 0]),
    ("orange", [255, 165, 0]),
    ("purple", [128, 0, 128]),
    ("pink", [255, 192, 203]),
    ("brown", [139, 69, 19]),
    ("beige", [245, 245, 220]),
    ("olive", [128, 128, 0]),
    ("teal", [0, 128, 128]),
];

pub fn color_by_name(name: &str) -> Result<[f64; 3]> {
    let key = name.trim().to_ascii_lowercase();
    COLOR_NAMES
        .iter()
        .find(|(n, _)| *n == key)
        .map(|(_, c)| c.map(f64::from))
        .ok_or_else(|| Error::invalid(format!("unknown color name '{name}'")))
}

#[derive(Clone, Debug, PartialEq)]
pub enum ColorEdit {
    /// Set the view-independent color to this 0-255 RGB value; view-dependent
    /// coefficients are kept.
    Replace([f64; 3]),
    /// Exchange two channels (0 = R, 1 = G, 2 = B) in every coefficient.
    Swap(usize, usize),
}

/// Recolors one entity. Geometry, opacity and every other entity are untouched.
pub fn edit_color(model: &Model, entity: &str, edit: &ColorEdit) -> Result<Model> {
    let e = model.index_of(entity)?;
    let mut out = model.clone();
    let set = &mut out.entities[e].set;
    let stride = set.sh_stride();
    match *edit {
        ColorEdit::Replace(rgb) => {
            if rgb.iter().any(|c| !(0.0..=255.0).contains(c)) {
                return Err(Error::invalid(format!("RGB {rgb:?} is outside 0..=255")));
            }
            let dc = rgb.map(|c| sh::dc_for_rgb(c / 255.0));
            for row in set.sh.chunks_exact_mut(stride) {
                row[..3].copy_from_slice(&dc);
            }
        }
        ColorEdit::Swap(a, b) => {
            if a > 2 || b > 2 {
                return Err(Error::invalid("channel indices must be 0, 1 or 2"));
            }
            for coeff in set.sh.chunks_exact_mut(3) {
                coeff.swap(a, b);
            }
        }
    }
    Ok(out)
}

/// Fitting settings for [`transfer_garment`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransferConfig {
    pub iterations: usize,
    pub lr: f64,
    pub collision: f64,
    pub iso: f64,
    pub collision_margin: f64,
    pub collision_radius: Option<f64>,
    pub knn: usize,
}

impl Default for TransferConfig {
    fn default() -> Self {
        Self { iterations: 200, lr: 1e-3, collision: 1.0, iso: 0.1, collision_margin: 0.0, collision_radius: Some(0.04), knn: 5 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferReport {
    pub iterations: usize,
    pub initial_collision: f64,
    pub final_collision: f64,
    /// Smallest signed clearance on the target body (meters); `None` when no
    /// body vertex is within the collision radius.
    pub min_clearance: Option<f64>,
}

fn same_hierarchy(a: &Skeleton, b: &Skeleton) -> bool {
    a.parents == b.parents
}

/// Re-expresses `garment` on a new body. Each Gaussian keeps its offset from
/// the nearest source body vertex, re-applied at the same vertex of the
/// target; weights are copied from that target vertex. Positions are then
/// refined on `λ_col L_col + λ_iso L_iso` against the transferred layout
/// until the garment no longer collides or the iteration budget is spent.
pub fn transfer_garment(
    garment: &Entity,
    source_body: &[Vec3],
    source_skeleton: &Skeleton,
    target: &BodyTemplate,
    cfg: &TransferConfig,
) -> Result<(Entity, TransferReport)> {
    if garment.set.is_empty() {
        return Err(Error::invalid(format!("garment '{}' has no Gaussians", garment.name())));
    }
    if !same_hierarchy(source_skeleton, &target.skeleton) {
        return Err(Error::invalid("source and target skeletons differ in joint count or hierarchy"));
    }
    if source_body.len() != target.vertex_count() {
        return Err(Error::dim(format!(
            "source body has {} vertices, target template {}",
            source_body.len(),
            target.vertex_count()
        )));
    }
    let index = PointIndex::new(source_body).ok_or_else(|| Error::invalid("source body has no vertices"))?;
    let tv = &target.rest_vertices;
    let mut set = garment.set.clone();
    let mut nearest = Vec::with_capacity(set.len());
    for i in 0..set.len() {
        let mu = set.mean(i);
        let (v, _) = index.nearest(&mu);
        set.set_mean(i, &(tv[v] + (mu - source_body[v])));
        nearest.push(v);
    }
    let weights = target.weights.select(&nearest, true);

    let joints = target.skeleton.rest_joints();
    let reference: Vec<Vec3> = (0..set.len()).map(|i| set.mean(i)).collect();
    let graph = knn_graph(&reference, cfg.knn);
    let no_covs = vec![Mat3::zeros(); set.len()];
    let mut moments = Moments::zeros(set.means.len());
    let adam = AdamParams::default();
    let collide = |means: &[Vec3]| collision_loss(tv, means, &joints, cfg.collision_margin, cfg.collision_radius);

    let mut means = reference.clone();
    let (initial, _) = collide(&means)?;
    let mut current = initial;
    let mut done = 0;
    while done < cfg.iterations && current > 0.0 {
        let (_, cg) = collide(&means)?;
        let (_, ig) = iso_loss(&means, &no_covs, &reference, &no_covs, &graph, 1.0, 0.0)?;
        let grad: Vec<f64> = cg
            .garment
            .iter()
            .zip(&ig.means)
            .flat_map(|(c, i)| (c * cfg.collision + i * cfg.iso).iter().copied().collect::<Vec<_>>())
            .collect();
        let mut flat: Vec<f64> = means.iter().flat_map(|m| m.iter().copied()).collect();
        moments.step(&mut flat, &grad, cfg.lr, done as u64 + 1, &adam)?;
        means = flat.chunks_exact(3).map(Vec3::from_column_slice).collect();
        done += 1;
        current = collide(&means)?.0;
    }
    for (i, m) in means.iter().enumerate() {
        set.set_mean(i, m);
    }
    let c = clearances(tv, &means, &joints, cfg.collision_radius);
    let report = TransferReport {
        iterations: done,
        initial_collision: initial,
        final_collision: current,
        min_clearance: c.into_iter().reduce(f64::min),
    };
    Ok((Entity { set, weights }, report))
}

/// `target` with `garment` added, replacing an entity of the same name.
pub fn attach_entity(target: &Model, garment: Entity) -> Result<Model> {
    let mut out = target.clone();
    match out.entities.iter().position(|e| e.name() == garment.name()) {
        Some(0) => return Err(Error::invalid("cannot replace the body entity")),
        Some(i) => out.entities[i] = garment,
        None => out.entities.push(garment),
    }
    out.validate()?;
    Ok(out)
}

/// Renders one frame per pose. A single camera is reused for every frame;
/// otherwise there must be one camera per pose.
pub fn animate(
    model: &Model,
    poses: &[Pose],
    cameras: &[Camera],
    background: [f64; 3],
    settings: &RenderSettings,
) -> Result<Vec<Image>> {
    if cameras.is_empty() || (cameras.len() != 1 && cameras.len() != poses.len()) {
        return Err(Error::dim(format!("{} cameras for {} poses", cameras.len(), poses.len())));
    }
    poses
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let cam = &cameras[if cameras.len() == 1 { 0 } else { i }];
            model.render(p, cam, background, settings).map(|o| o.color)
        })
        .collect()
}
