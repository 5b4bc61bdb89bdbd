use crate::error::{Error, Result};
use crate::knn::PointIndex;
use crate::math::Vec3;

/// Gradients of [`collision_loss`].
#[derive(Clone, Debug, PartialEq)]
pub struct CollisionGrads {
    pub garment: Vec<Vec3>,
    pub body: Vec<Vec3>,
    pub joints: Vec<Vec3>,
}

/// One body vertex's hinge term `max(0, ε − (v_c − v_b)·(v_b − v_k))³` for a
/// garment point `v_c` and joint `v_k`, with its gradients w.r.t. `(v_c, v_b, v_k)`.
pub fn collision_term(vc: &Vec3, vb: &Vec3, vk: &Vec3, margin: f64) -> (f64, [Vec3; 3]) {
    let out = vc - vb;
    let radial = vb - vk;
    let h = margin - out.dot(&radial);
    if h <= 0.0 {
        return (0.0, [Vec3::zeros(); 3]);
    }
    // d(term)/d(dot) = -3h²
    let k = -3.0 * h * h;
    (h * h * h, [radial * k, (vc - vb * 2.0 + vk) * k, -out * k])
}

/// Anti-penetration penalty summed over body vertices. Each body vertex is
/// paired with its nearest garment point and nearest joint. With
/// `max_distance`, pairs farther apart than that are ignored, so body
/// regions the garment does not cover add nothing.
pub fn collision_loss(
    body: &[Vec3],
    garment: &[Vec3],
    joints: &[Vec3],
    margin: f64,
    max_distance: Option<f64>,
) -> Result<(f64, CollisionGrads)> {
    if joints.is_empty() {
        return Err(Error::invalid("collision needs at least one joint"));
    }
    let mut g = CollisionGrads {
        garment: vec![Vec3::zeros(); garment.len()],
        body: vec![Vec3::zeros(); body.len()],
        joints: vec![Vec3::zeros(); joints.len()],
    };
    let Some(index) = PointIndex::new(garment) else {
        return Ok((0.0, g));
    };
    let limit = max_distance.map(|d| d * d);
    let mut total = 0.0;
    for (b, vb) in body.iter().enumerate() {
        let (c, d2) = index.nearest(vb);
        if limit.is_some_and(|l| d2 > l) {
            continue;
        }
        let k = nearest_joint(joints, vb);
        let (v, [gc, gb, gk]) = collision_term(&garment[c], vb, &joints[k], margin);
        if v > 0.0 {
            total += v;
            g.garment[c] += gc;
            g.body[b] += gb;
            g.joints[k] += gk;
        }
    }
    Ok((total, g))
}

fn nearest_joint(joints: &[Vec3], p: &Vec3) -> usize {
    let mut best = (0, f64::INFINITY);
    for (k, j) in joints.iter().enumerate() {
        let d = (j - p).norm_squared();
        if d < best.1 {
            best = (k, d);
        }
    }
    best.0
}

/// Signed clearance of each body vertex: the projection of its nearest
/// garment point's offset onto the body-from-joint direction (negative means
/// the garment lies inside the body there). Pairs beyond `max_distance` are
/// skipped.
pub fn clearances(body: &[Vec3], garment: &[Vec3], joints: &[Vec3], max_distance: Option<f64>) -> Vec<f64> {
    let Some(index) = PointIndex::new(garment) else {
        return Vec::new();
    };
    let limit = max_distance.map(|d| d * d);
    body.iter()
        .filter_map(|vb| {
            let (c, d2) = index.nearest(vb);
            if limit.is_some_and(|l| d2 > l) || joints.is_empty() {
                return None;
            }
            let radial = vb - joints[nearest_joint(joints, vb)];
            let n = radial.norm();
            (n > 0.0).then(|| (garment[c] - vb).dot(&radial) / n)
        })
        .collect()
}
