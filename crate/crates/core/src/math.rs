//! Small fixed-size linear algebra helpers shared by the geometry, splatting
//! and loss code. Quaternions are stored as `[w, x, y, z]`.

use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;
pub type Mat4 = Matrix4<f64>;
pub type Quat = Vector4<f64>;

pub const IDENTITY_QUAT: [f64; 4] = [1.0, 0.0, 0.0, 0.0];

#[inline]
pub fn vec3(s: &[f64]) -> Vec3 {
    Vec3::new(s[0], s[1], s[2])
}

#[inline]
pub fn quat(s: &[f64]) -> Quat {
    Quat::new(s[0], s[1], s[2], s[3])
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Rotation matrix of a unit quaternion `[w, x, y, z]`.
pub fn quat_to_mat(q: &Quat) -> Mat3 {
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    Mat3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Rotation of the normalized raw quaternion, plus the normalized quaternion.
pub fn raw_quat_to_mat(raw: &Quat) -> (Mat3, Quat) {
    let n = raw.norm();
    let unit = if n > 0.0 { raw / n } else { Quat::new(1.0, 0.0, 0.0, 0.0) };
    (quat_to_mat(&unit), unit)
}

/// Gradient w.r.t. the raw (unnormalized) quaternion given `dL/dR` where
/// `R = quat_to_mat(raw / |raw|)`.
pub fn raw_quat_backward(raw: &Quat, d_rot: &Mat3) -> Quat {
    let n = raw.norm();
    if n == 0.0 {
        return Quat::zeros();
    }
    let q = raw / n;
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    let g = d_rot;
    let dw = 2.0
        * (-z * g[(0, 1)] + y * g[(0, 2)] + z * g[(1, 0)] - x * g[(1, 2)] - y * g[(2, 0)]
            + x * g[(2, 1)]);
    let dx = 2.0
        * (y * g[(0, 1)] + z * g[(0, 2)] + y * g[(1, 0)] - 2.0 * x * g[(1, 1)] - w * g[(1, 2)]
            + z * g[(2, 0)]
            + w * g[(2, 1)]
            - 2.0 * x * g[(2, 2)]);
    let dy = 2.0
        * (-2.0 * y * g[(0, 0)] + x * g[(0, 1)] + w * g[(0, 2)] + x * g[(1, 0)] + z * g[(1, 2)]
            - w * g[(2, 0)]
            + z * g[(2, 1)]
            - 2.0 * y * g[(2, 2)]);
    let dz = 2.0
        * (-2.0 * z * g[(0, 0)] - w * g[(0, 1)] + x * g[(0, 2)] + w * g[(1, 0)]
            - 2.0 * z * g[(1, 1)]
            + y * g[(1, 2)]
            + x * g[(2, 0)]
            + y * g[(2, 1)]);
    let d_unit = Quat::new(dw, dx, dy, dz);
    (d_unit - q * q.dot(&d_unit)) / n
}

/// Quaternion `[w, x, y, z]` of a proper rotation matrix (Shepperd's method).
pub fn mat_to_quat(m: &Mat3) -> Quat {
    let tr = m.trace();
    let q = if tr > 0.0 {
        let s = (tr + 1.0).sqrt() * 2.0;
        Quat::new(
            0.25 * s,
            (m[(2, 1)] - m[(1, 2)]) / s,
            (m[(0, 2)] - m[(2, 0)]) / s,
            (m[(1, 0)] - m[(0, 1)]) / s,
        )
    } else if m[(0, 0)] > m[(1, 1)] && m[(0, 0)] > m[(2, 2)] {
        let s = (1.0 + m[(0, 0)] - m[(1, 1)] - m[(2, 2)]).sqrt() * 2.0;
        Quat::new(
            (m[(2, 1)] - m[(1, 2)]) / s,
            0.25 * s,
            (m[(0, 1)] + m[(1, 0)]) / s,
            (m[(0, 2)] + m[(2, 0)]) / s,
        )
    } else if m[(1, 1)] > m[(2, 2)] {
        let s = (1.0 + m[(1, 1)] - m[(0, 0)] - m[(2, 2)]).sqrt() * 2.0;
        Quat::new(
            (m[(0, 2)] - m[(2, 0)]) / s,
            (m[(0, 1)] + m[(1, 0)]) / s,
            0.25 * s,
            (m[(1, 2)] + m[(2, 1)]) / s,
        )
    } else {
        let s = (1.0 + m[(2, 2)] - m[(0, 0)] - m[(1, 1)]).sqrt() * 2.0;
        Quat::new(
            (m[(1, 0)] - m[(0, 1)]) / s,
            (m[(0, 2)] + m[(2, 0)]) / s,
            (m[(1, 2)] + m[(2, 1)]) / s,
            0.25 * s,
        )
    };
    let q = q.normalize();
    if q[0] < 0.0 {
        -q
    } else {
        q
    }
}

#[inline]
pub fn skew(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rodrigues' formula for an axis-angle vector (radians).
pub fn axis_angle_to_mat(v: &Vec3) -> Mat3 {
    let theta = v.norm();
    let k = skew(v);
    if theta < 1e-12 {
        return Mat3::identity() + k;
    }
    let a = theta.sin() / theta;
    let b = (1.0 - theta.cos()) / (theta * theta);
    Mat3::identity() + k * a + k * k * b
}

/// Reduces the rotation angle into `[0, 2π)` keeping the axis.
pub fn canonical_axis_angle(v: &Vec3) -> Vec3 {
    let theta = v.norm();
    if theta < std::f64::consts::TAU {
        return *v;
    }
    let reduced = theta.rem_euclid(std::f64::consts::TAU);
    v * (reduced / theta)
}

pub fn rigid(rot: &Mat3, t: &Vec3) -> Mat4 {
    let mut m = Mat4::identity();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(rot);
    m.fixed_view_mut::<3, 1>(0, 3).copy_from(t);
    m
}

#[inline]
pub fn rot_part(m: &Mat4) -> Mat3 {
    m.fixed_view::<3, 3>(0, 0).into_owned()
}

#[inline]
pub fn trans_part(m: &Mat4) -> Vec3 {
    m.fixed_view::<3, 1>(0, 3).into_owned()
}

/// Inverse of a rigid transform without a general 4x4 inversion.
pub fn rigid_inverse(m: &Mat4) -> Mat4 {
    let r = rot_part(m).transpose();
    let t = -(r * trans_part(m));
    rigid(&r, &t)
}

/// `R diag(s)^2 R^T`.
pub fn covariance_from(rot: &Mat3, scale: &Vec3) -> Mat3 {
    let m = rot * Mat3::from_diagonal(scale);
    m * m.transpose()
}

/// Backward of [`covariance_from`]: given symmetric `dL/dΣ`, returns
/// `(dL/dR, dL/ds)`.
pub fn covariance_backward(rot: &Mat3, scale: &Vec3, d_cov: &Mat3) -> (Mat3, Vec3) {
    let s2 = Mat3::from_diagonal(&scale.component_mul(scale));
    let g = (d_cov + d_cov.transpose()) * 0.5;
    let d_rot = g * rot * s2 * 2.0;
    let inner = rot.transpose() * g * rot;
    let d_scale = Vec3::new(
        2.0 * scale.x * inner[(0, 0)],
        2.0 * scale.y * inner[(1, 1)],
        2.0 * scale.z * inner[(2, 2)],
    );
    (d_rot, d_scale)
}

pub fn is_rotation(m: &Mat3, tol: f64) -> bool {
    let ortho = (m.transpose() * m - Mat3::identity()).abs().max();
    ortho <= tol && (m.determinant() - 1.0).abs() <= tol
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn quat_round_trip() {
        let q = Quat::new(0.3, -0.5, 0.7, 0.2).normalize();
        let m = quat_to_mat(&q);
        assert!(is_rotation(&m, 1e-12));
        let back = mat_to_quat(&m);
        let q = if q[0] < 0.0 { -q } else { q };
        assert_relative_eq!(back, q, epsilon = 1e-12);
    }

    #[test]
    fn raw_quat_gradient_matches_differences() {
        let raw = Quat::new(0.9, -0.4, 0.25, 0.6);
        let weights = Mat3::new(0.3, -1.2, 0.5, 0.8, 0.1, -0.7, 1.1, 0.4, -0.2);
        let f = |q: &Quat| raw_quat_to_mat(q).0.component_mul(&weights).sum();
        let analytic = raw_quat_backward(&raw, &weights);
        let h = 1e-6;
        for k in 0..4 {
            let mut p = raw;
            let mut m = raw;
            p[k] += h;
            m[k] -= h;
            let fd = (f(&p) - f(&m)) / (2.0 * h);
            assert_relative_eq!(analytic[k], fd, epsilon = 1e-8);
        }
    }

    #[test]
    fn covariance_gradient_matches_differences() {
        let rot = quat_to_mat(&Quat::new(0.8, 0.1, -0.3, 0.5).normalize());
        let scale = Vec3::new(0.5, 1.5, 0.9);
        let w = Mat3::new(1.0, 0.2, -0.3, 0.2, -0.5, 0.7, -0.3, 0.7, 0.4);
        let (d_rot, d_scale) = covariance_backward(&rot, &scale, &w);
        let h = 1e-6;
        for k in 0..3 {
            let mut sp = scale;
            let mut sm = scale;
            sp[k] += h;
            sm[k] -= h;
            let fd = (covariance_from(&rot, &sp).component_mul(&w).sum()
                - covariance_from(&rot, &sm).component_mul(&w).sum())
                / (2.0 * h);
            assert_relative_eq!(d_scale[k], fd, epsilon = 1e-8);
        }
        for r in 0..3 {
            for c in 0..3 {
                let mut rp = rot;
                let mut rm = rot;
                rp[(r, c)] += h;
                rm[(r, c)] -= h;
                let fd = (covariance_from(&rp, &scale).component_mul(&w).sum()
                    - covariance_from(&rm, &scale).component_mul(&w).sum())
                    / (2.0 * h);
                assert_relative_eq!(d_rot[(r, c)], fd, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn rodrigues_quarter_turn() {
        let m = axis_angle_to_mat(&Vec3::new(0.0, 0.0, std::f64::consts::FRAC_PI_2));
        let expect = Mat3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        assert_relative_eq!(m, expect, epsilon = 1e-15);
    }

    #[test]
    fn canonical_angle_below_full_turn() {
        let v = Vec3::new(0.0, 7.0, 0.0);
        let c = canonical_axis_angle(&v);
        assert!(c.norm() < std::f64::consts::TAU);
        assert_relative_eq!(axis_angle_to_mat(&v), axis_angle_to_mat(&c), epsilon = 1e-12);
    }
}
