//! Scene bundle directory:
//!
//! ```text
//! scene.toml                 SceneInfo
//! template.txt               body template
//! cameras/cameras.txt        one camera per frame
//! cameras/poses.txt          one pose per frame
//! images/0000.png            RGB targets
//! masks/<entity>/0000.png    binary entity masks
//! gt.ckpt                    ground-truth model (optional)
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{atomic_write, load_checkpoint, load_png, save_checkpoint, save_png, text, CameraRecord, Checkpoint};
use crate::error::{Error, Result};
use crate::geometry::Pose;
use crate::model::Model;
use crate::raster::Image;
use crate::splatting::Camera;
use crate::templates::{BodyTemplate, GarmentSpec};

pub const BUNDLE_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneInfo {
    pub version: u32,
    pub width: usize,
    pub height: usize,
    pub background: [f64; 3],
    /// Entity names in layer order, body first.
    pub entities: Vec<String>,
    pub frames: usize,
    pub garments: Vec<GarmentSpec>,
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BundleFrame {
    pub camera: Camera,
    pub held_out: bool,
    pub pose: Pose,
    pub image: Image,
    /// One single-channel mask per entity, in `SceneInfo::entities` order.
    pub masks: Vec<Image>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneBundle {
    pub info: SceneInfo,
    pub template: BodyTemplate,
    pub frames: Vec<BundleFrame>,
    pub gt: Option<Model>,
}

fn frame_name(i: usize) -> String {
    format!("{i:04}.png")
}

fn check_entity_name(name: &str) -> Result<()> {
    if name.is_empty() || name.contains(['/', '\\']) || name.starts_with('.') {
        return Err(Error::invalid(format!("entity name '{name}' cannot be used as a directory")));
    }
    Ok(())
}

pub fn save_bundle(dir: &Path, b: &SceneBundle) -> Result<()> {
    if b.frames.len() != b.info.frames {
        return Err(Error::dim(format!("scene.toml lists {} frames, bundle has {}", b.info.frames, b.frames.len())));
    }
    for name in &b.info.entities {
        check_entity_name(name)?;
    }
    let info = toml::to_string_pretty(&b.info).expect("scene info serializes");
    atomic_write(&dir.join("scene.toml"), info.as_bytes())?;
    text::save_template(&dir.join("template.txt"), &b.template)?;
    let cams: Vec<CameraRecord> =
        b.frames.iter().map(|f| CameraRecord { camera: f.camera.clone(), held_out: f.held_out }).collect();
    text::save_cameras(&dir.join("cameras/cameras.txt"), &cams)?;
    let poses: Vec<Pose> = b.frames.iter().map(|f| f.pose.clone()).collect();
    text::save_poses(&dir.join("cameras/poses.txt"), &poses)?;
    for (i, f) in b.frames.iter().enumerate() {
        if f.masks.len() != b.info.entities.len() {
            return Err(Error::dim(format!("frame {i} has {} masks for {} entities", f.masks.len(), b.info.entities.len())));
        }
        save_png(&dir.join("images").join(frame_name(i)), &f.image)?;
        for (name, m) in b.info.entities.iter().zip(&f.masks) {
            save_png(&dir.join("masks").join(name).join(frame_name(i)), m)?;
        }
    }
    if let Some(gt) = &b.gt {
        save_checkpoint(&dir.join("gt.ckpt"), &Checkpoint { model: gt.clone(), iteration: 0 })?;
    }
    Ok(())
}

pub fn load_bundle(dir: &Path) -> Result<SceneBundle> {
    let info_path = dir.join("scene.toml");
    let text_info = std::fs::read_to_string(&info_path)
        .map_err(|e| Error::Config { path: info_path.clone(), message: e.to_string() })?;
    let info: SceneInfo =
        toml::from_str(&text_info).map_err(|e| Error::Config { path: info_path.clone(), message: e.to_string() })?;
    if info.version != BUNDLE_VERSION {
        return Err(Error::Version { found: info.version, expected: BUNDLE_VERSION });
    }
    for name in &info.entities {
        check_entity_name(name)?;
    }
    let template = text::load_template(&dir.join("template.txt"))?;
    let cams = text::load_cameras(&dir.join("cameras/cameras.txt"))?;
    let poses = text::load_poses(&dir.join("cameras/poses.txt"))?;
    if cams.len() != info.frames || poses.len() != info.frames {
        return Err(Error::dim(format!(
            "scene.toml lists {} frames, found {} cameras and {} poses",
            info.frames,
            cams.len(),
            poses.len()
        )));
    }
    let mut frames = Vec::with_capacity(info.frames);
    for (i, (rec, pose)) in cams.into_iter().zip(poses).enumerate() {
        pose.validate(&template.skeleton)?;
        let image = load_png(&dir.join("images").join(frame_name(i)), 3)?;
        if image.width != rec.camera.width || image.height != rec.camera.height {
            return Err(Error::dim(format!("image {i} does not match its camera size")));
        }
        let masks = info
            .entities
            .iter()
            .map(|name| load_png(&dir.join("masks").join(name).join(frame_name(i)), 1))
            .collect::<Result<Vec<_>>>()?;
        frames.push(BundleFrame { camera: rec.camera, held_out: rec.held_out, pose, image, masks });
    }
    let gt_path = dir.join("gt.ckpt");
    let gt = if gt_path.exists() { Some(load_checkpoint(&gt_path)?.model) } else { None };
    Ok(SceneBundle { info, template, frames, gt })
}
