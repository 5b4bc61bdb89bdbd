//! Real spherical harmonics up to degree 3, in the sign convention common to
//! splatting renderers. Coefficients are laid out `[coeff][channel]`.

use crate::math::{Mat3, Vec3};

pub const SH_C0: f64 = 0.282_094_791_773_878_14;
const SH_C1: f64 = 0.488_602_511_902_919_9;
const SH_C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];
const SH_C3: [f64; 7] = [
    -0.590_043_589_926_643_5,
    2.890_611_442_640_554,
    -0.457_045_799_464_465_8,
    0.373_176_332_590_115_4,
    -0.457_045_799_464_465_8,
    1.445_305_721_320_277,
    -0.590_043_589_926_643_5,
];

pub const MAX_DEGREE: usize = 3;

/// Basis values at `v` (used as-is, not renormalized). `out.len()` selects the
/// degree: 1, 4, 9 or 16.
pub fn basis(v: &Vec3, out: &mut [f64]) {
    let (x, y, z) = (v.x, v.y, v.z);
    let k = out.len();
    out[0] = SH_C0;
    if k > 1 {
        out[1] = -SH_C1 * y;
        out[2] = SH_C1 * z;
        out[3] = -SH_C1 * x;
    }
    if k > 4 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        out[4] = SH_C2[0] * x * y;
        out[5] = SH_C2[1] * y * z;
        out[6] = SH_C2[2] * (2.0 * zz - xx - yy);
        out[7] = SH_C2[3] * x * z;
        out[8] = SH_C2[4] * (xx - yy);
        if k > 9 {
            out[9] = SH_C3[0] * y * (3.0 * xx - yy);
            out[10] = SH_C3[1] * x * y * z;
            out[11] = SH_C3[2] * y * (4.0 * zz - xx - yy);
            out[12] = SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy);
            out[13] = SH_C3[4] * x * (4.0 * zz - xx - yy);
            out[14] = SH_C3[5] * z * (xx - yy);
            out[15] = SH_C3[6] * x * (xx - 3.0 * yy);
        }
    }
}

/// Gradient of each basis function w.r.t. `v`.
pub fn basis_grad(v: &Vec3, out: &mut [Vec3]) {
    let (x, y, z) = (v.x, v.y, v.z);
    let k = out.len();
    out[0] = Vec3::zeros();
    if k > 1 {
        out[1] = Vec3::new(0.0, -SH_C1, 0.0);
        out[2] = Vec3::new(0.0, 0.0, SH_C1);
        out[3] = Vec3::new(-SH_C1, 0.0, 0.0);
    }
    if k > 4 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        out[4] = Vec3::new(y, x, 0.0) * SH_C2[0];
        out[5] = Vec3::new(0.0, z, y) * SH_C2[1];
        out[6] = Vec3::new(-2.0 * x, -2.0 * y, 4.0 * z) * SH_C2[2];
        out[7] = Vec3::new(z, 0.0, x) * SH_C2[3];
        out[8] = Vec3::new(2.0 * x, -2.0 * y, 0.0) * SH_C2[4];
        if k > 9 {
            out[9] = Vec3::new(6.0 * x * y, 3.0 * xx - 3.0 * yy, 0.0) * SH_C3[0];
            out[10] = Vec3::new(y * z, x * z, x * y) * SH_C3[1];
            out[11] = Vec3::new(-2.0 * x * y, 4.0 * zz - xx - 3.0 * yy, 8.0 * y * z) * SH_C3[2];
            out[12] = Vec3::new(-6.0 * x * z, -6.0 * y * z, 6.0 * zz - 3.0 * xx - 3.0 * yy) * SH_C3[3];
            out[13] = Vec3::new(4.0 * zz - 3.0 * xx - yy, -2.0 * x * y, 8.0 * x * z) * SH_C3[4];
            out[14] = Vec3::new(2.0 * x * z, -2.0 * y * z, xx - yy) * SH_C3[5];
            out[15] = Vec3::new(3.0 * xx - 3.0 * yy, -6.0 * x * y, 0.0) * SH_C3[6];
        }
    }
}

/// Radiance of one Gaussian seen along world direction `dir`:
/// `max(0, sh(rotᵀ dir, coeffs) + 0.5)` per channel.
pub fn radiance(coeffs: &[f64], dir: &Vec3, rot: &Mat3) -> [f64; 3] {
    let k = coeffs.len() / 3;
    let local = rot.transpose() * dir;
    let mut b = [0.0; 16];
    basis(&local, &mut b[..k]);
    let mut rgb = [0.5; 3];
    for (j, bj) in b[..k].iter().enumerate() {
        for c in 0..3 {
            rgb[c] += bj * coeffs[3 * j + c];
        }
    }
    rgb.map(|v| v.max(0.0))
}

/// DC coefficient giving `rgb` under degree-0 evaluation.
pub fn dc_for_rgb(rgb: f64) -> f64 {
    (rgb - 0.5) / SH_C0
}
