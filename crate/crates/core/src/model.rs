//! A layered avatar: one skeleton and several skinned Gaussian entities.

use crate::error::{Error, Result};
use crate::gaussians::{GaussianSet, PosedGaussians};
use crate::geometry::{deform_gaussians, forward_kinematics, BoneTransforms, DeformCache, Pose, Skeleton, SkinningWeights};
use crate::io::InitConfig;
use crate::splatting::{render, Camera, RenderOutput, RenderSettings};
use crate::templates::{generate_garment_template, init_gaussians_from_vertices, stride_subset, BodyTemplate, GarmentSpec, GaussianDefaults};

/// Gaussians of one entity with their skinning weights.
#[derive(Clone, Debug, PartialEq)]
pub struct Entity {
    pub set: GaussianSet,
    pub weights: SkinningWeights,
}

impl Entity {
    pub fn name(&self) -> &str {
        &self.set.entity
    }

    pub fn validate(&self, joints: usize) -> Result<()> {
        self.set.validate()?;
        self.weights.validate()?;
        if self.weights.len() != self.set.len() || self.weights.joints != joints {
            return Err(Error::dim(format!(
                "entity '{}' has {} Gaussians but {}x{} skinning weights (skeleton has {joints} joints)",
                self.name(),
                self.set.len(),
                self.weights.len(),
                self.weights.joints
            )));
        }
        Ok(())
    }
}

/// Entities in layer order: the body first, then garments inside out.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub skeleton: Skeleton,
    pub entities: Vec<Entity>,
}

impl Model {
    /// Fresh entities seeded on the rest-pose template: the body, then one
    /// shell per garment, each subsampled to its configured count.
    pub fn from_templates(template: &BodyTemplate, garments: &[GarmentSpec], init: &InitConfig) -> Result<Self> {
        template.validate()?;
        let d = GaussianDefaults { sh_degree: init.sh_degree, opacity_logit: init.opacity_logit, fallback_scale: init.fallback_scale };
        let verts = &template.rest_vertices;
        let idx = stride_subset(verts.len(), init.body_gaussians);
        let pts: Vec<_> = idx.iter().map(|&i| verts[i]).collect();
        let mut entities = vec![Entity { set: init_gaussians_from_vertices(&pts, "body", &d), weights: template.weights.select(&idx, true) }];
        let mut sorted: Vec<&GarmentSpec> = garments.iter().collect();
        sorted.sort_by_key(|g| g.layer);
        for g in sorted {
            let gt = generate_garment_template(template, verts, g)?;
            let idx = stride_subset(gt.vertices.len(), init.garment_gaussians);
            let pts: Vec<_> = idx.iter().map(|&i| gt.vertices[i]).collect();
            entities.push(Entity { set: init_gaussians_from_vertices(&pts, &g.name, &d), weights: gt.weights.select(&idx, true) });
        }
        let model = Self { skeleton: template.skeleton.clone(), entities };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        self.skeleton.validate()?;
        let joints = self.skeleton.joint_count();
        for (i, e) in self.entities.iter().enumerate() {
            e.validate(joints)?;
            if self.entities[..i].iter().any(|o| o.name() == e.name()) {
                return Err(Error::invalid(format!("entity name '{}' is used twice", e.name())));
            }
        }
        Ok(())
    }

    pub fn names(&self) -> Vec<String> {
        self.entities.iter().map(|e| e.name().to_string()).collect()
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.entities.iter().position(|e| e.name() == name).ok_or_else(|| Error::UnknownEntity(name.to_string()))
    }

    pub fn gaussian_count(&self) -> usize {
        self.entities.iter().map(|e| e.set.len()).sum()
    }

    pub fn bones(&self, pose: &Pose) -> Result<BoneTransforms> {
        forward_kinematics(&self.skeleton, pose)
    }

    /// Every entity deformed by `bones`, concatenated in entity order.
    pub fn posed(&self, bones: &BoneTransforms) -> Result<(PosedGaussians, Vec<DeformCache>)> {
        let mut parts = Vec::with_capacity(self.entities.len());
        let mut caches = Vec::with_capacity(self.entities.len());
        for e in &self.entities {
            let (p, c) = deform_gaussians(&e.set, &e.weights, bones)?;
            parts.push(p);
            caches.push(c);
        }
        let refs: Vec<&PosedGaussians> = parts.iter().collect();
        Ok((PosedGaussians::concat(&refs), caches))
    }

    /// Composite render of the posed model.
    pub fn render(&self, pose: &Pose, camera: &Camera, background: [f64; 3], settings: &RenderSettings) -> Result<RenderOutput> {
        let (scene, _) = self.posed(&self.bones(pose)?)?;
        Ok(render(&scene, camera, background, settings)?.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::templates::{capsule_template, CapsuleParams};

    #[test]
    fn seeds_body_and_layered_garments() {
        let t = capsule_template(&CapsuleParams::default()).unwrap();
        let g = |name: &str, region: &str, layer| GarmentSpec { name: name.into(), regions: vec![region.into()], offset: 0.02, layer };
        let init = InitConfig { body_gaussians: 200, garment_gaussians: 50, ..Default::default() };
        let m = Model::from_templates(&t, &[g("jacket", "torso", 2), g("shirt", "torso", 1)], &init).unwrap();
        assert_eq!(m.names(), ["body", "shirt", "jacket"]);
        assert_eq!(m.entities.iter().map(|e| e.set.len()).collect::<Vec<_>>(), [200, 50, 50]);
        let r = |e: &Entity| e.set.means.chunks(3).map(|p| p[0].hypot(p[2])).sum::<f64>() / e.set.len() as f64;
        assert!(r(&m.entities[2]) > r(&m.entities[1]));
        assert!(Model::from_templates(&t, &[g("x", "nowhere", 1)], &init).is_err());
    }
}
