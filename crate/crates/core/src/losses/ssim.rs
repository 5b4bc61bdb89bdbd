//! Structural similarity over valid Gaussian windows, and its stochastic
//! patch-based variant.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::raster::Image;

pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;
pub const SSIM_SIGMA: f64 = 1.5;

/// Window placement for [`ssim`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SsimParams {
    pub kernel: usize,
    pub stride: usize,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self { kernel: 11, stride: 1 }
    }
}

/// Normalized 1D Gaussian window.
pub fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let w: Vec<f64> = (0..size).map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

fn out_len(n: usize, k: usize, s: usize) -> usize {
    (n - k) / s + 1
}

/// Valid strided 2D filtering of one channel with a separable window.
/// `src` is `h x w`; the result is `oh x ow`.
fn filter(src: &[f64], w: usize, h: usize, win: &[f64], stride: usize) -> Vec<f64> {
    let k = win.len();
    let (ow, oh) = (out_len(w, k, stride), out_len(h, k, stride));
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for ox in 0..ow {
            let base = y * w + ox * stride;
            rows[y * ow + ox] = win.iter().enumerate().map(|(t, c)| c * src[base + t]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for oy in 0..oh {
        for ox in 0..ow {
            out[oy * ow + ox] = win.iter().enumerate().map(|(t, c)| c * rows[(oy * stride + t) * ow + ox]).sum();
        }
    }
    out
}

/// Adjoint of [`filter`].
fn filter_transpose(g: &[f64], w: usize, h: usize, win: &[f64], stride: usize) -> Vec<f64> {
    let k = win.len();
    let (ow, oh) = (out_len(w, k, stride), out_len(h, k, stride));
    let mut rows = vec![0.0; h * ow];
    for oy in 0..oh {
        for t in 0..k {
            let y = oy * stride + t;
            for ox in 0..ow {
                rows[y * ow + ox] += win[t] * g[oy * ow + ox];
            }
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for ox in 0..ow {
            let r = rows[y * ow + ox];
            for t in 0..k {
                out[y * w + ox * stride + t] += win[t] * r;
            }
        }
    }
    out
}

fn channel(img: &Image, c: usize) -> Vec<f64> {
    img.data.iter().skip(c).step_by(img.channels).copied().collect()
}

fn validate(a: &Image, b: &Image, p: &SsimParams) -> Result<()> {
    a.check_shape(b)?;
    if p.kernel == 0 || p.stride == 0 {
        return Err(Error::invalid("SSIM kernel and stride must be positive"));
    }
    if p.kernel > a.width || p.kernel > a.height {
        return Err(Error::invalid(format!(
            "SSIM kernel {} exceeds image {}x{}",
            p.kernel, a.width, a.height
        )));
    }
    Ok(())
}

/// Mean SSIM over all valid window positions and channels, plus its gradient
/// w.r.t. `a` when `want_grad`.
pub fn ssim_with_grad(a: &Image, b: &Image, p: &SsimParams, want_grad: bool) -> Result<(f64, Option<Image>)> {
    validate(a, b, p)?;
    let (w, h) = (a.width, a.height);
    let win = gaussian_window(p.kernel, SSIM_SIGMA);
    let (ow, oh) = (out_len(w, p.kernel, p.stride), out_len(h, p.kernel, p.stride));
    let count = (ow * oh * a.channels) as f64;
    let mut total = 0.0;
    let mut grad = want_grad.then(|| a.zeros_like());
    for c in 0..a.channels {
        let x = channel(a, c);
        let y = channel(b, c);
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(u, v)| u * v).collect();
        let mx = filter(&x, w, h, &win, p.stride);
        let my = filter(&y, w, h, &win, p.stride);
        let exx = filter(&xx, w, h, &win, p.stride);
        let eyy = filter(&yy, w, h, &win, p.stride);
        let exy = filter(&xy, w, h, &win, p.stride);
        let m = mx.len();
        let mut g_mu = vec![0.0; m];
        let mut g_xx = vec![0.0; m];
        let mut g_xy = vec![0.0; m];
        for k in 0..m {
            let a1 = 2.0 * mx[k] * my[k] + SSIM_C1;
            let a2 = 2.0 * (exy[k] - mx[k] * my[k]) + SSIM_C2;
            let b1 = mx[k] * mx[k] + my[k] * my[k] + SSIM_C1;
            let b2 = (exx[k] - mx[k] * mx[k]) + (eyy[k] - my[k] * my[k]) + SSIM_C2;
            let s = a1 * a2 / (b1 * b2);
            total += s;
            if want_grad {
                let inv = 1.0 / (b1 * b2);
                g_mu[k] = (2.0 * my[k] * a2 - 2.0 * my[k] * a1) * inv - s * (2.0 * mx[k] / b1 - 2.0 * mx[k] / b2);
                g_xx[k] = -s / b2;
                g_xy[k] = 2.0 * a1 * inv;
            }
        }
        if let Some(g) = grad.as_mut() {
            let scale = 1.0 / count;
            let t_mu = filter_transpose(&g_mu, w, h, &win, p.stride);
            let t_xx = filter_transpose(&g_xx, w, h, &win, p.stride);
            let t_xy = filter_transpose(&g_xy, w, h, &win, p.stride);
            for q in 0..w * h {
                g.data[q * a.channels + c] = scale * (t_mu[q] + 2.0 * x[q] * t_xx[q] + y[q] * t_xy[q]);
            }
        }
    }
    Ok((total / count, grad))
}

pub fn ssim(a: &Image, b: &Image, p: &SsimParams) -> Result<f64> {
    Ok(ssim_with_grad(a, b, p, false)?.0)
}

/// Stochastic patch SSIM settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct S3imParams {
    pub patch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub repeats: usize,
}

impl Default for S3imParams {
    fn default() -> Self {
        Self { patch: 64, kernel: 11, stride: 1, repeats: 10 }
    }
}

/// Top-left corners of the `repeats` patches drawn from `seed`.
pub fn s3im_offsets(width: usize, height: usize, p: &S3imParams, seed: u64) -> Vec<(usize, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..p.repeats)
        .map(|_| (rng.random_range(0..=width - p.patch), rng.random_range(0..=height - p.patch)))
        .collect()
}

/// Mean of `1 - SSIM` over seeded random patch pairs cropped identically from
/// both images, and its gradient w.r.t. `rendered`.
pub fn s3im(rendered: &Image, target: &Image, p: &S3imParams, seed: u64) -> Result<(f64, Image)> {
    rendered.check_shape(target)?;
    if p.repeats == 0 {
        return Err(Error::invalid("S3IM needs at least one patch"));
    }
    if p.patch > rendered.width || p.patch > rendered.height {
        return Err(Error::invalid(format!(
            "S3IM patch {} exceeds image {}x{}",
            p.patch, rendered.width, rendered.height
        )));
    }
    if p.kernel > p.patch {
        return Err(Error::invalid("S3IM kernel exceeds patch size"));
    }
    let params = SsimParams { kernel: p.kernel, stride: p.stride };
    let mut grad = rendered.zeros_like();
    let mut total = 0.0;
    let inv = 1.0 / p.repeats as f64;
    for (x0, y0) in s3im_offsets(rendered.width, rendered.height, p, seed) {
        let a = rendered.crop(x0, y0, p.patch, p.patch);
        let b = target.crop(x0, y0, p.patch, p.patch);
        let (s, g) = ssim_with_grad(&a, &b, &params, true)?;
        total += 1.0 - s;
        let mut g = g.expect("gradient requested");
        g.data.iter_mut().for_each(|v| *v *= -inv);
        grad.add_patch(&g, x0, y0);
    }
    Ok((total * inv, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn noise(w: usize, h: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..w * h * 3).map(|_| rng.random_range(0.0..1.0)).collect();
        Image::from_data(w, h, 3, data).unwrap()
    }

    #[test]
    fn identical_is_one() {
        let a = noise(20, 16, 1);
        assert_relative_eq!(ssim(&a, &a, &SsimParams::default()).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn constant_black_vs_white_closed_form() {
        let a = Image::solid(16, 16, [0.0; 3]);
        let b = Image::solid(16, 16, [1.0; 3]);
        // μx = 0, μy = 1, no variance: S = C1 C2 / ((1 + C1) C2).
        let expect = SSIM_C1 / (1.0 + SSIM_C1);
        assert_relative_eq!(ssim(&a, &b, &SsimParams::default()).unwrap(), expect, epsilon = 1e-15);
    }

    #[test]
    fn symmetric() {
        let a = noise(18, 18, 2);
        let b = noise(18, 18, 3);
        let p = SsimParams::default();
        assert_relative_eq!(ssim(&a, &b, &p).unwrap(), ssim(&b, &a, &p).unwrap(), epsilon = 1e-14);
    }

    #[test]
    fn gradient_matches_differences() {
        let a = noise(14, 13, 4);
        let b = noise(14, 13, 5);
        let p = SsimParams { kernel: 5, stride: 2 };
        let (_, g) = ssim_with_grad(&a, &b, &p, true).unwrap();
        let g = g.unwrap();
        let h = 1e-5;
        for k in (0..a.data.len()).step_by(7) {
            let mut ap = a.clone();
            let mut am = a.clone();
            ap.data[k] += h;
            am.data[k] -= h;
            let fd = (ssim(&ap, &b, &p).unwrap() - ssim(&am, &b, &p).unwrap()) / (2.0 * h);
            assert_relative_eq!(g.data[k], fd, epsilon = 1e-9);
        }
    }

    #[test]
    fn s3im_cases() {
        let a = noise(24, 20, 6);
        let b = noise(24, 20, 7);
        let p = S3imParams { patch: 16, kernel: 11, stride: 1, repeats: 4 };
        assert_eq!(s3im(&a, &a, &p, 99).unwrap().0, 0.0);
        assert_eq!(s3im(&a, &b, &p, 3).unwrap().0.to_bits(), s3im(&a, &b, &p, 3).unwrap().0.to_bits());
        let full = S3imParams { patch: 20, kernel: 11, stride: 1, repeats: 1 };
        let sq_a = a.crop(0, 0, 20, 20);
        let sq_b = b.crop(0, 0, 20, 20);
        let v = s3im(&sq_a, &sq_b, &full, 0).unwrap().0;
        assert_relative_eq!(v, 1.0 - ssim(&sq_a, &sq_b, &SsimParams::default()).unwrap(), epsilon = 1e-15);
        assert!(s3im(&a, &b, &S3imParams { patch: 32, ..p }, 0).is_err());
    }
}
