use crate::error::{Error, Result};
use crate::raster::Image;

/// Mean absolute error and its gradient w.r.t. `rendered` (zero at ties).
pub fn recon_l1(rendered: &Image, target: &Image) -> Result<(f64, Image)> {
    rendered.check_shape(target)?;
    let n = rendered.data.len().max(1) as f64;
    let mut grad = rendered.zeros_like();
    let mut sum = 0.0;
    for (k, (r, t)) in rendered.data.iter().zip(&target.data).enumerate() {
        let d = r - t;
        sum += d.abs();
        grad.data[k] = if d > 0.0 {
            1.0 / n
        } else if d < 0.0 {
            -1.0 / n
        } else {
            0.0
        };
    }
    Ok((sum / n, grad))
}

/// Mean over entities of the mean absolute difference between accumulated
/// alpha and the binary mask. Returns one gradient map per entity.
pub fn mask_loss(alphas: &[&Image], masks: &[&Image]) -> Result<(f64, Vec<Image>)> {
    if alphas.len() != masks.len() {
        return Err(Error::dim(format!("{} alpha maps for {} masks", alphas.len(), masks.len())));
    }
    if alphas.is_empty() {
        return Ok((0.0, Vec::new()));
    }
    let ne = alphas.len() as f64;
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(alphas.len());
    for (a, m) in alphas.iter().zip(masks) {
        let (v, mut g) = recon_l1(a, m)?;
        g.data.iter_mut().for_each(|x| *x /= ne);
        total += v;
        grads.push(g);
    }
    Ok((total / ne, grads))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn l1_cases() {
        let a = Image::solid(4, 3, [0.2, 0.5, 0.7]);
        assert_eq!(recon_l1(&a, &a).unwrap().0, 0.0);
        assert!(recon_l1(&a, &a).unwrap().1.data.iter().all(|g| *g == 0.0));
        let mut b = a.clone();
        b.data.iter_mut().for_each(|v| *v += 0.1);
        let (v, _) = recon_l1(&b, &a).unwrap();
        assert!((v - 0.1).abs() < 1e-12);
        assert!(recon_l1(&a, &Image::new(3, 3, 3)).is_err());
    }

    #[test]
    fn mask_quarter_coverage() {
        let alpha = Image::new(8, 8, 1);
        let mut mask = Image::new(8, 8, 1);
        for y in 0..4 {
            for x in 0..4 {
                *mask.at_mut(x, y, 0) = 1.0;
            }
        }
        assert_eq!(mask_loss(&[&alpha], &[&mask]).unwrap().0, 0.25);
        assert_eq!(mask_loss(&[&mask], &[&mask]).unwrap().0, 0.0);
    }
}
