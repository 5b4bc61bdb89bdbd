//! Canonical body and garment templates.
//!
//! A body template is a parametric surface in rest pose: mean vertices, a
//! linear shape basis, an optional pose-corrective basis, per-vertex offsets,
//! a joint regressor and base skinning weights. Garments are shells offset
//! outward from labelled regions of the body and share its skeleton.

use crate::error::{Error, Result};
use crate::gaussians::{sh_coeff_count, GaussianSet, DEFAULT_ENTITY};
use crate::geometry::{Pose, Skeleton, SkinningWeights};
use crate::knn;
use crate::math::{self, Quat, Vec3};

#[derive(Clone, Debug, PartialEq)]
pub struct BodyTemplate {
    pub rest_vertices: Vec<Vec3>,
    /// Optional triangulation used for vertex normals.
    pub faces: Vec<[usize; 3]>,
    /// `V x 3 x shape_dims`, vertex-major.
    pub shape_basis: Vec<f64>,
    pub shape_dims: usize,
    /// `V x 3 x 9·joints` on flattened `R(θ_j) − I` of every non-global
    /// joint rotation. Empty means no pose correctives.
    pub pose_basis: Vec<f64>,
    pub offsets: Vec<Vec3>,
    /// `joints x V`; each row sums to one.
    pub joint_regressor: Vec<f64>,
    pub weights: SkinningWeights,
    pub skeleton: Skeleton,
    pub region_names: Vec<String>,
    /// Region index per vertex.
    pub regions: Vec<u16>,
}

impl BodyTemplate {
    pub fn vertex_count(&self) -> usize {
        self.rest_vertices.len()
    }

    pub fn joint_count(&self) -> usize {
        self.skeleton.joint_count()
    }

    pub fn pose_dims(&self) -> usize {
        9 * self.joint_count()
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.vertex_count();
        let j = self.joint_count();
        self.skeleton.validate()?;
        self.weights.validate()?;
        if self.shape_basis.len() != v * 3 * self.shape_dims {
            return Err(Error::dim(format!("shape basis has {} entries, expected {}", self.shape_basis.len(), v * 3 * self.shape_dims)));
        }
        if !self.pose_basis.is_empty() && self.pose_basis.len() != v * 3 * self.pose_dims() {
            return Err(Error::dim(format!("pose basis has {} entries, expected 0 or {}", self.pose_basis.len(), v * 3 * self.pose_dims())));
        }
        if self.offsets.len() != v || self.regions.len() != v {
            return Err(Error::dim("offsets and region labels need one entry per vertex"));
        }
        if self.weights.len() != v || self.weights.joints != j {
            return Err(Error::dim(format!("skinning weights are {}x{}, expected {v}x{j}", self.weights.len(), self.weights.joints)));
        }
        if self.joint_regressor.len() != j * v {
            return Err(Error::dim(format!("joint regressor has {} entries, expected {}", self.joint_regressor.len(), j * v)));
        }
        for (k, row) in self.joint_regressor.chunks_exact(v.max(1)).enumerate() {
            if (row.iter().sum::<f64>() - 1.0).abs() > 1e-6 {
                return Err(Error::invalid(format!("joint regressor row {k} does not sum to one")));
            }
        }
        if let Some(f) = self.faces.iter().find(|f| f.iter().any(|&i| i >= v)) {
            return Err(Error::invalid(format!("face {f:?} indexes past {v} vertices")));
        }
        if let Some(r) = self.regions.iter().find(|&&r| r as usize >= self.region_names.len()) {
            return Err(Error::invalid(format!("region label {r} has no name")));
        }
        Ok(())
    }

    /// Joint positions regressed from canonical vertices.
    pub fn regress_joints(&self, vertices: &[Vec3]) -> Result<Vec<Vec3>> {
        let v = self.vertex_count();
        if vertices.len() != v {
            return Err(Error::dim(format!("{} vertices for a {v}-vertex template", vertices.len())));
        }
        Ok(self
            .joint_regressor
            .chunks_exact(v)
            .map(|row| row.iter().zip(vertices).fold(Vec3::zeros(), |acc, (w, p)| acc + p * *w))
            .collect())
    }

    /// The skeleton with its rest offsets moved to the regressed joints of
    /// `vertices` (rest rotations are kept).
    pub fn fitted_skeleton(&self, vertices: &[Vec3]) -> Result<Skeleton> {
        let joints = self.regress_joints(vertices)?;
        let rest_local = (0..joints.len())
            .map(|j| {
                let rot = math::rot_part(&self.skeleton.rest_local[j]);
                let offset = match self.skeleton.parents[j] {
                    Some(p) => joints[j] - joints[p],
                    None => joints[j],
                };
                math::rigid(&rot, &offset)
            })
            .collect();
        Skeleton::new(self.skeleton.parents.clone(), rest_local)
    }

    /// Vertices whose region is one of `names`.
    pub fn select_regions(&self, names: &[String]) -> Result<Vec<usize>> {
        let mut ids = Vec::with_capacity(names.len());
        for n in names {
            match self.region_names.iter().position(|r| r == n) {
                Some(i) => ids.push(i as u16),
                None => return Err(Error::invalid(format!("unknown body region '{n}'"))),
            }
        }
        Ok((0..self.vertex_count()).filter(|&v| ids.contains(&self.regions[v])).collect())
    }

    /// Uniformly scaled copy: vertices, bases, offsets and skeleton.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut t = self.clone();
        t.rest_vertices.iter_mut().for_each(|p| *p *= factor);
        t.offsets.iter_mut().for_each(|p| *p *= factor);
        t.shape_basis.iter_mut().for_each(|p| *p *= factor);
        t.pose_basis.iter_mut().for_each(|p| *p *= factor);
        t.skeleton = self.skeleton.scaled(factor);
        t
    }
}

/// Flattened `R(θ_j) − I` over the non-global joint rotations.
pub fn pose_feature(pose: &Pose) -> Vec<f64> {
    pose.rotations
        .iter()
        .skip(1)
        .flat_map(|r| {
            let m = math::axis_angle_to_mat(r) - math::Mat3::identity();
            (0..3).flat_map(move |a| (0..3).map(move |b| m[(a, b)]))
        })
        .collect()
}

/// `T̄ + B_s(β) + B_p(θ) + O`.
pub fn canonical_body(t: &BodyTemplate, beta: &[f64], pose: &Pose) -> Result<Vec<Vec3>> {
    if beta.len() != t.shape_dims {
        return Err(Error::dim(format!("{} shape coefficients for a {}-dimensional basis", beta.len(), t.shape_dims)));
    }
    pose.validate(&t.skeleton)?;
    let feature = pose_feature(pose);
    let pd = t.pose_dims();
    let mut out = Vec::with_capacity(t.vertex_count());
    for v in 0..t.vertex_count() {
        let mut p = t.rest_vertices[v] + t.offsets[v];
        for a in 0..3 {
            let row = v * 3 + a;
            for (b, coef) in beta.iter().enumerate() {
                p[a] += t.shape_basis[row * t.shape_dims + b] * coef;
            }
            if !t.pose_basis.is_empty() {
                for (b, f) in feature.iter().enumerate() {
                    p[a] += t.pose_basis[row * pd + b] * f;
                }
            }
        }
        out.push(p);
    }
    Ok(out)
}

/// A garment shell over labelled body regions.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GarmentSpec {
    pub name: String,
    pub regions: Vec<String>,
    /// Shell distance per layer (meters).
    pub offset: f64,
    /// 1 is the innermost garment.
    pub layer: u32,
}

/// Garment vertices with the body vertex each one came from.
#[derive(Clone, Debug, PartialEq)]
pub struct GarmentTemplate {
    pub name: String,
    pub vertices: Vec<Vec3>,
    pub source: Vec<usize>,
    pub weights: SkinningWeights,
}

/// Unit outward normals: area-weighted from faces when there are any,
/// otherwise radial from the nearest joint.
pub fn vertex_normals(vertices: &[Vec3], faces: &[[usize; 3]], joints: &[Vec3]) -> Vec<Vec3> {
    let mut n = vec![Vec3::zeros(); vertices.len()];
    if faces.is_empty() {
        for (i, p) in vertices.iter().enumerate() {
            if let Some(j) = joints.iter().min_by(|a, b| (*a - p).norm_squared().total_cmp(&(*b - p).norm_squared())) {
                n[i] = p - j;
            }
        }
    } else {
        for f in faces {
            // Unnormalized cross product weights by twice the area.
            let c = (vertices[f[1]] - vertices[f[0]]).cross(&(vertices[f[2]] - vertices[f[0]]));
            for &i in f {
                n[i] += c;
            }
        }
    }
    n.iter().map(|v| v.try_normalize(1e-12).unwrap_or_else(Vec3::zeros)).collect()
}

fn connected(selected: &[usize], faces: &[[usize; 3]], vertex_count: usize) -> bool {
    let mut parent: Vec<usize> = (0..vertex_count).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    let mut inside = vec![false; vertex_count];
    selected.iter().for_each(|&v| inside[v] = true);
    for f in faces {
        for e in 0..3 {
            let (a, b) = (f[e], f[(e + 1) % 3]);
            if inside[a] && inside[b] {
                let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                parent[ra] = rb;
            }
        }
    }
    let root = find(&mut parent, selected[0]);
    selected.iter().all(|&v| find(&mut parent, v) == root)
}

/// Offsets the selected body vertices along their normals by
/// `layer · offset` and copies their skinning weights.
///
/// `body` are the canonical body vertices (same count as the template).
/// Connectivity of the selection is only checked when the template has faces.
pub fn generate_garment_template(t: &BodyTemplate, body: &[Vec3], spec: &GarmentSpec) -> Result<GarmentTemplate> {
    if !(spec.offset > 0.0) || !spec.offset.is_finite() {
        return Err(Error::invalid(format!("garment '{}' needs a positive offset", spec.name)));
    }
    if spec.layer == 0 {
        return Err(Error::invalid(format!("garment '{}' layer index starts at 1", spec.name)));
    }
    if body.len() != t.vertex_count() {
        return Err(Error::dim(format!("{} body vertices for a {}-vertex template", body.len(), t.vertex_count())));
    }
    let selected = t.select_regions(&spec.regions)?;
    if selected.is_empty() {
        return Err(Error::invalid(format!("garment '{}' selects no vertices", spec.name)));
    }
    if !t.faces.is_empty() && !connected(&selected, &t.faces, body.len()) {
        return Err(Error::invalid(format!("garment '{}' region is not connected", spec.name)));
    }
    let joints = t.regress_joints(body)?;
    let normals = vertex_normals(body, &t.faces, &joints);
    let dist = spec.offset * spec.layer as f64;
    let mut vertices = Vec::with_capacity(selected.len());
    for &v in &selected {
        if normals[v] == Vec3::zeros() {
            return Err(Error::invalid(format!("body vertex {v} has no usable normal")));
        }
        vertices.push(body[v] + normals[v] * dist);
    }
    Ok(GarmentTemplate { name: spec.name.clone(), vertices, weights: t.weights.select(&selected, true), source: selected })
}

/// Initial values for [`init_gaussians_from_vertices`].
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianDefaults {
    pub sh_degree: usize,
    pub opacity_logit: f64,
    /// Scale used when there are too few vertices to measure spacing.
    pub fallback_scale: f64,
}

impl Default for GaussianDefaults {
    fn default() -> Self {
        Self { sh_degree: 0, opacity_logit: 0.0, fallback_scale: 0.01 }
    }
}

/// One isotropic, mid-gray Gaussian per vertex, sized by the mean
/// nearest-neighbour spacing.
pub fn init_gaussians_from_vertices(vertices: &[Vec3], entity: &str, d: &GaussianDefaults) -> GaussianSet {
    let name = if entity.is_empty() { DEFAULT_ENTITY } else { entity };
    let mut set = GaussianSet::empty(name, d.sh_degree);
    let scale = knn::mean_nn_spacing(vertices).filter(|s| *s > 0.0).unwrap_or(d.fallback_scale);
    let ls = Vec3::repeat(scale.ln());
    let sh = vec![0.0; 3 * sh_coeff_count(d.sh_degree)];
    for p in vertices {
        set.push(*p, Quat::new(1.0, 0.0, 0.0, 0.0), ls, d.opacity_logit, &sh);
    }
    set
}

/// Parameters of [`capsule_template`].
#[derive(Clone, Debug, PartialEq)]
pub struct CapsuleParams {
    pub radius: f64,
    /// Length of the cylindrical part along +y.
    pub length: f64,
    pub rings: usize,
    pub segments: usize,
}

impl Default for CapsuleParams {
    fn default() -> Self {
        Self { radius: 0.22, length: 1.2, rings: 60, segments: 40 }
    }
}

/// A vertical capsule centred at the origin, triangulated, with a four-joint
/// skeleton (pelvis, spine, neck, knee), smooth distance-based skinning
/// weights, a one-dimensional girth shape basis and regions `head`, `torso`,
/// `waist`, `legs`, `feet`.
pub fn capsule_template(p: &CapsuleParams) -> Result<BodyTemplate> {
    if p.rings < 4 || p.segments < 3 || !(p.radius > 0.0) || !(p.length > 0.0) {
        return Err(Error::invalid("capsule needs rings >= 4, segments >= 3 and positive size"));
    }
    let half = p.length / 2.0;
    let total = p.length + 2.0 * p.radius;
    // Ring heights parametrized by arc length along the profile.
    let profile = |s: f64| -> (f64, f64) {
        let cap = p.radius * std::f64::consts::FRAC_PI_2;
        let len = 2.0 * cap + p.length;
        let u = s * len;
        if u < cap {
            let a = u / p.radius;
            (-half - p.radius * a.cos(), p.radius * a.sin())
        } else if u < cap + p.length {
            (-half + (u - cap), p.radius)
        } else {
            let a = (u - cap - p.length) / p.radius;
            (half + p.radius * a.sin(), p.radius * a.cos())
        }
    };
    let mut verts = Vec::new();
    let mut girth = Vec::new();
    verts.push(Vec3::new(0.0, -half - p.radius, 0.0));
    girth.push(Vec3::zeros());
    for r in 1..p.rings {
        let (y, rad) = profile(r as f64 / p.rings as f64);
        for s in 0..p.segments {
            let a = 2.0 * std::f64::consts::PI * (s as f64 + 0.5 * (r % 2) as f64) / p.segments as f64;
            let dir = Vec3::new(a.cos(), 0.0, a.sin());
            verts.push(Vec3::new(0.0, y, 0.0) + dir * rad);
            girth.push(dir * (rad / p.radius) * 0.1);
        }
    }
    verts.push(Vec3::new(0.0, half + p.radius, 0.0));
    girth.push(Vec3::zeros());
    let top = verts.len() - 1;
    let ring = |r: usize, s: usize| 1 + (r - 1) * p.segments + s % p.segments;
    let mut faces = Vec::new();
    for s in 0..p.segments {
        faces.push([0, ring(1, s), ring(1, s + 1)]);
        faces.push([top, ring(p.rings - 1, s + 1), ring(p.rings - 1, s)]);
    }
    for r in 1..p.rings - 1 {
        for s in 0..p.segments {
            let (a, b, c, d) = (ring(r, s), ring(r, s + 1), ring(r + 1, s), ring(r + 1, s + 1));
            faces.push([a, c, b]);
            faces.push([b, c, d]);
        }
    }

    // Joint heights as fractions of the total height, bottom at 0.
    let y_at = |f: f64| -half - p.radius + f * total;
    let heights = [y_at(0.45), y_at(0.68), y_at(0.86), y_at(0.22)];
    let parents = vec![None, Some(0), Some(1), Some(0)];
    let rest_local = (0..4)
        .map(|j| {
            let off = match parents[j] {
                Some(par) => heights[j] - heights[par],
                None => heights[j],
            };
            math::rigid(&math::Mat3::identity(), &Vec3::new(0.0, off, 0.0))
        })
        .collect();
    let skeleton = Skeleton::new(parents, rest_local)?;

    let v = verts.len();
    let sigma = 0.12 * total;
    let mut base = Vec::with_capacity(v * 4);
    for q in &verts {
        let row: Vec<f64> = heights.iter().map(|h| (-(q.y - h).powi(2) / (2.0 * sigma * sigma)).exp()).collect();
        let s: f64 = row.iter().sum();
        base.extend(row.iter().map(|w| w / s));
    }
    let weights = SkinningWeights::new(4, base)?;

    // Each joint regresses to the mean of the ring nearest its height.
    let mut joint_regressor = vec![0.0; 4 * v];
    for (j, h) in heights.iter().enumerate() {
        let r = (1..p.rings).min_by(|a, b| (profile(*a as f64 / p.rings as f64).0 - h).abs().total_cmp(&(profile(*b as f64 / p.rings as f64).0 - h).abs())).unwrap();
        for s in 0..p.segments {
            joint_regressor[j * v + ring(r, s)] = 1.0 / p.segments as f64;
        }
    }
    let region_names: Vec<String> = ["head", "torso", "waist", "legs", "feet"].iter().map(|s| s.to_string()).collect();
    let regions = verts
        .iter()
        .map(|q| {
            let f = (q.y + half + p.radius) / total;
            match f {
                f if f >= 0.84 => 0,
                f if f >= 0.52 => 1,
                f if f >= 0.46 => 2,
                f if f >= 0.1 => 3,
                _ => 4,
            }
        })
        .collect();
    let shape_basis = girth.iter().flat_map(|g| [g.x, g.y, g.z]).collect();
    let mut t = BodyTemplate {
        rest_vertices: verts,
        faces,
        shape_basis,
        shape_dims: 1,
        pose_basis: Vec::new(),
        offsets: vec![Vec3::zeros(); v],
        joint_regressor,
        weights,
        skeleton,
        region_names,
        regions,
    };
    t.skeleton = t.fitted_skeleton(&t.rest_vertices)?;
    t.validate()?;
    Ok(t)
}

/// Evenly strided subset of `count` indices out of `0..n` (all of them when
/// `count >= n`).
pub fn stride_subset(n: usize, count: usize) -> Vec<usize> {
    if count >= n {
        return (0..n).collect();
    }
    (0..count).map(|i| i * n / count).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};

    /// Sphere of radius one around a single joint at the origin, no faces.
    fn sphere_template(n: usize) -> BodyTemplate {
        let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
        let verts: Vec<Vec3> = (0..n)
            .map(|i| {
                let y = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
                let r = (1.0 - y * y).sqrt();
                let a = golden * i as f64;
                Vec3::new(r * a.cos(), y, r * a.sin())
            })
            .collect();
        BodyTemplate {
            shape_basis: Vec::new(),
            shape_dims: 0,
            pose_basis: Vec::new(),
            offsets: vec![Vec3::zeros(); n],
            joint_regressor: vec![1.0 / n as f64; n],
            weights: SkinningWeights::rigid(1, n, 0),
            skeleton: Skeleton::chain(Vec3::zeros(), Vec3::zeros(), 1),
            region_names: vec!["all".into()],
            regions: vec![0; n],
            faces: Vec::new(),
            rest_vertices: verts,
        }
    }

    #[test]
    fn rest_canonical_body_is_mean_shape() {
        let t = capsule_template(&CapsuleParams::default()).unwrap();
        let out = canonical_body(&t, &[0.0], &Pose::rest(4)).unwrap();
        assert_eq!(out, t.rest_vertices);
    }

    #[test]
    fn unit_shape_coefficient_adds_basis_column() {
        let t = capsule_template(&CapsuleParams::default()).unwrap();
        let out = canonical_body(&t, &[1.0], &Pose::rest(4)).unwrap();
        for v in 0..t.vertex_count() {
            let col = Vec3::new(t.shape_basis[3 * v], t.shape_basis[3 * v + 1], t.shape_basis[3 * v + 2]);
            assert_relative_eq!(out[v] - t.rest_vertices[v], col, epsilon = 1e-15);
        }
    }

    #[test]
    fn canonical_body_sums_all_terms() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut t = capsule_template(&CapsuleParams { rings: 8, segments: 6, ..Default::default() }).unwrap();
        let v = t.vertex_count();
        t.pose_basis = (0..v * 3 * t.pose_dims()).map(|_| rng.random_range(-0.01..0.01)).collect();
        t.offsets = (0..v).map(|_| Vec3::from_fn(|_, _| rng.random_range(-0.02..0.02))).collect();
        let beta = [rng.random_range(-1.0..1.0)];
        let mut pose = Pose::rest(4);
        pose.rotations.iter_mut().for_each(|r| *r = Vec3::from_fn(|_, _| rng.random_range(-0.5..0.5)));
        let out = canonical_body(&t, &beta, &pose).unwrap();

        // Each term computed on its own, from rotation matrices built directly.
        let mut feat = Vec::new();
        for r in &pose.rotations[1..] {
            let m = nalgebra::Rotation3::from_scaled_axis(*r).into_inner() - math::Mat3::identity();
            for a in 0..3 {
                for b in 0..3 {
                    feat.push(m[(a, b)]);
                }
            }
        }
        for i in 0..v {
            let shape = Vec3::from_fn(|a, _| t.shape_basis[3 * i + a] * beta[0]);
            let posec = Vec3::from_fn(|a, _| (0..feat.len()).map(|b| t.pose_basis[(3 * i + a) * feat.len() + b] * feat[b]).sum());
            assert_relative_eq!(out[i], t.rest_vertices[i] + shape + posec + t.offsets[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let t = capsule_template(&CapsuleParams::default()).unwrap();
        assert!(canonical_body(&t, &[0.0, 1.0], &Pose::rest(4)).is_err());
        assert!(canonical_body(&t, &[0.0], &Pose::rest(3)).is_err());
    }

    #[test]
    fn sphere_shell_is_radial() {
        let t = sphere_template(500);
        let spec = GarmentSpec { name: "coat".into(), regions: vec!["all".into()], offset: 0.1, layer: 1 };
        let g = generate_garment_template(&t, &t.rest_vertices, &spec).unwrap();
        assert_eq!(g.vertices.len(), 500);
        for p in &g.vertices {
            assert!((p.norm() - 1.1).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_offset_and_empty_selection_fail() {
        let t = sphere_template(50);
        let bad = GarmentSpec { name: "coat".into(), regions: vec!["all".into()], offset: 0.0, layer: 1 };
        assert!(generate_garment_template(&t, &t.rest_vertices, &bad).is_err());
        let mut t2 = capsule_template(&CapsuleParams::default()).unwrap();
        t2.region_names.push("tail".into());
        let none = GarmentSpec { name: "tail".into(), regions: vec!["tail".into()], offset: 0.1, layer: 1 };
        assert!(generate_garment_template(&t2, &t2.rest_vertices.clone(), &none).is_err());
    }

    #[test]
    fn torso_shell_clears_the_body() {
        let t = capsule_template(&CapsuleParams::default()).unwrap();
        let spec = GarmentSpec { name: "shirt".into(), regions: vec!["torso".into()], offset: 0.03, layer: 1 };
        let g = generate_garment_template(&t, &t.rest_vertices, &spec).unwrap();
        assert_eq!(g.vertices.len(), t.select_regions(&spec.regions).unwrap().len());
        for p in &g.vertices {
            let d = t.rest_vertices.iter().map(|q| (p - q).norm()).fold(f64::INFINITY, f64::min);
            assert!(d >= 0.9 * 0.03, "garment vertex {d} from body");
        }
    }

    #[test]
    fn outer_layers_sit_farther_out() {
        let t = capsule_template(&CapsuleParams::default()).unwrap();
        let mk = |layer| GarmentSpec { name: "l".into(), regions: vec!["torso".into()], offset: 0.02, layer };
        let a = generate_garment_template(&t, &t.rest_vertices, &mk(1)).unwrap();
        let b = generate_garment_template(&t, &t.rest_vertices, &mk(2)).unwrap();
        for (i, v) in a.source.iter().enumerate() {
            let body = t.rest_vertices[*v];
            assert!((b.vertices[i] - body).norm() > (a.vertices[i] - body).norm());
        }
    }

    #[test]
    fn capsule_regression_and_regions() {
        let t = capsule_template(&CapsuleParams::default()).unwrap();
        let joints = t.regress_joints(&t.rest_vertices).unwrap();
        for (j, p) in joints.iter().enumerate() {
            assert_relative_eq!(*p, t.skeleton.rest_joints()[j], epsilon = 1e-12);
            assert!(p.x.abs() < 1e-12 && p.z.abs() < 1e-12);
        }
        for r in 0..5 {
            assert!(t.regions.iter().any(|&x| x == r), "region {r} empty");
        }
        assert!(t.select_regions(&["torso".into()]).is_ok());
        assert!(t.select_regions(&["tail".into()]).is_err());
    }

    #[test]
    fn collinear_spacing_sets_scale() {
        let v = [Vec3::zeros(), Vec3::new(1.0, 0.0, 0.0), Vec3::new(2.0, 0.0, 0.0)];
        let set = init_gaussians_from_vertices(&v, "", &GaussianDefaults::default());
        assert_eq!(set.entity, DEFAULT_ENTITY);
        assert_eq!(set.len(), 3);
        for i in 0..3 {
            assert_relative_eq!(set.scale(i), Vec3::repeat(1.0), epsilon = 1e-15);
            assert_eq!(set.opacity_logits[i], 0.0);
            assert!(set.sh_row(i).iter().all(|c| *c == 0.0));
        }
    }

    #[test]
    fn one_gaussian_per_body_vertex() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let v: Vec<Vec3> = (0..6890).map(|_| Vec3::from_fn(|_, _| rng.random_range(-1.0..1.0))).collect();
        let set = init_gaussians_from_vertices(&v, "body", &GaussianDefaults::default());
        assert_eq!(set.len(), 6890);
        assert_eq!(set.entity, "body");
    }
}
