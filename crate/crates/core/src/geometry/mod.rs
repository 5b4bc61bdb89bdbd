//! Skeleton kinematics, skinning weights and linear blend skinning.

mod deform;
mod skinning;

pub use deform::{
    deform_backward, deform_gaussians, deform_points, polar_backward, polar_rotation, DeformCache, DeformGrads,
};
pub use skinning::SkinningWeights;

use crate::error::{Error, Result};
use crate::math::{self, Mat3, Mat4, Vec3};

/// Joint hierarchy with rest-pose local transforms.
#[derive(Clone, Debug, PartialEq)]
pub struct Skeleton {
    /// `None` for the root. Parents precede their children.
    pub parents: Vec<Option<usize>>,
    /// Rigid transform of each joint relative to its parent (root: world).
    pub rest_local: Vec<Mat4>,
}

impl Skeleton {
    pub fn new(parents: Vec<Option<usize>>, rest_local: Vec<Mat4>) -> Result<Self> {
        let s = Self { parents, rest_local };
        s.validate()?;
        Ok(s)
    }

    /// Straight chain of joints, each offset from its parent by `step`.
    pub fn chain(root: Vec3, step: Vec3, joints: usize) -> Self {
        let parents = (0..joints).map(|j| j.checked_sub(1)).collect();
        let rest_local = (0..joints)
            .map(|j| math::rigid(&Mat3::identity(), if j == 0 { &root } else { &step }))
            .collect();
        Self { parents, rest_local }
    }

    pub fn joint_count(&self) -> usize {
        self.parents.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.parents.is_empty() {
            return Err(Error::invalid("skeleton has no joints"));
        }
        if self.parents.len() != self.rest_local.len() {
            return Err(Error::dim(format!(
                "{} parent entries but {} rest transforms",
                self.parents.len(),
                self.rest_local.len()
            )));
        }
        for (j, p) in self.parents.iter().enumerate() {
            match (j, p) {
                (0, None) => {}
                (0, Some(_)) => return Err(Error::invalid("joint 0 must be the root")),
                (_, None) => return Err(Error::invalid(format!("joint {j} has no parent; only joint 0 may be a root"))),
                (_, Some(p)) if *p >= j => {
                    return Err(Error::invalid(format!("joint {j} has parent {p}; parents must precede children")))
                }
                _ => {}
            }
        }
        for (j, m) in self.rest_local.iter().enumerate() {
            if !m.iter().all(|v| v.is_finite()) || !math::is_rotation(&math::rot_part(m), 1e-6) {
                return Err(Error::invalid(format!("rest transform of joint {j} is not rigid")));
            }
        }
        Ok(())
    }

    pub fn rest_global(&self) -> Vec<Mat4> {
        let mut out: Vec<Mat4> = Vec::with_capacity(self.joint_count());
        for (j, local) in self.rest_local.iter().enumerate() {
            let g = match self.parents[j] {
                Some(p) => out[p] * local,
                None => *local,
            };
            out.push(g);
        }
        out
    }

    /// Rest-pose joint positions.
    pub fn rest_joints(&self) -> Vec<Vec3> {
        self.rest_global().iter().map(math::trans_part).collect()
    }

    /// Copy with every rest offset multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let rest_local = self
            .rest_local
            .iter()
            .map(|m| math::rigid(&math::rot_part(m), &(math::trans_part(m) * factor)))
            .collect();
        Self { parents: self.parents.clone(), rest_local }
    }
}

/// Global translation plus `joint_count + 1` axis-angle rotations: index 0 is
/// the global orientation, index `j + 1` the local rotation of joint `j`.
#[derive(Clone, Debug, PartialEq)]
pub struct Pose {
    pub root_translation: Vec3,
    pub rotations: Vec<Vec3>,
}

impl Pose {
    pub fn rest(joints: usize) -> Self {
        Self { root_translation: Vec3::zeros(), rotations: vec![Vec3::zeros(); joints + 1] }
    }

    pub fn validate(&self, skeleton: &Skeleton) -> Result<()> {
        if self.rotations.len() != skeleton.joint_count() + 1 {
            return Err(Error::dim(format!(
                "pose has {} rotations, skeleton with {} joints needs {}",
                self.rotations.len(),
                skeleton.joint_count(),
                skeleton.joint_count() + 1
            )));
        }
        if !self.root_translation.iter().chain(self.rotations.iter().flat_map(|r| r.iter())).all(|v| v.is_finite()) {
            return Err(Error::invalid("pose has non-finite entries"));
        }
        Ok(())
    }

    /// Same rotations with each angle reduced below a full turn.
    pub fn canonicalized(&self) -> Self {
        Self {
            root_translation: self.root_translation,
            rotations: self.rotations.iter().map(math::canonical_axis_angle).collect(),
        }
    }
}

/// Per-joint transforms from canonical to observation space.
#[derive(Clone, Debug, PartialEq)]
pub struct BoneTransforms {
    pub transforms: Vec<Mat4>,
    /// Posed joint positions.
    pub joints: Vec<Vec3>,
}

impl BoneTransforms {
    pub fn identity(joints: usize) -> Self {
        Self { transforms: vec![Mat4::identity(); joints], joints: vec![Vec3::zeros(); joints] }
    }

    pub fn len(&self) -> usize {
        self.transforms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transforms.is_empty()
    }
}

/// Posed global transform of each joint composed with the inverse rest
/// global transform.
pub fn forward_kinematics(skeleton: &Skeleton, pose: &Pose) -> Result<BoneTransforms> {
    pose.validate(skeleton)?;
    let rest = skeleton.rest_global();
    let global = math::rigid(&math::axis_angle_to_mat(&pose.rotations[0]), &pose.root_translation);
    let mut posed: Vec<Mat4> = Vec::with_capacity(skeleton.joint_count());
    for (j, local) in skeleton.rest_local.iter().enumerate() {
        let rot = math::rigid(&math::axis_angle_to_mat(&pose.rotations[j + 1]), &Vec3::zeros());
        let parent = match skeleton.parents[j] {
            Some(p) => posed[p],
            None => global,
        };
        posed.push(parent * local * rot);
    }
    let transforms = posed.iter().zip(&rest).map(|(p, r)| p * math::rigid_inverse(r)).collect();
    let joints = posed.iter().map(math::trans_part).collect();
    Ok(BoneTransforms { transforms, joints })
}
