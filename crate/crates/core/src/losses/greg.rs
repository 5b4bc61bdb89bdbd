use crate::error::{Error, Result};
use crate::gaussians::{GaussianGrads, GaussianSet};
use crate::geometry::SkinningWeights;

/// Gradients of [`gaussian_reg_loss`].
#[derive(Clone, Debug)]
pub struct RegGrads {
    pub set: GaussianGrads,
    pub delta: Vec<f64>,
}

/// Adds `coef * (population std of each column)` of `rows` into `value` and
/// the matching gradients into `grads` (same row layout).
fn std_term(rows: &[&[f64]], coef: f64, value: &mut f64, grads: &mut [Vec<f64>]) {
    let m = rows.len() as f64;
    let dims = rows[0].len();
    for d in 0..dims {
        let mean = rows.iter().map(|r| r[d]).sum::<f64>() / m;
        let var = rows.iter().map(|r| (r[d] - mean).powi(2)).sum::<f64>() / m;
        let std = var.sqrt();
        *value += coef * std;
        if std > 0.0 {
            for (g, r) in grads.iter_mut().zip(rows) {
                g[d] += coef * (r[d] - mean) / (m * std);
            }
        }
    }
}

/// Neighbourhood smoothness of every attribute plus skinning-weight and scale
/// magnitude penalties, averaged over Gaussians.
///
/// For Gaussian `i` with neighbourhood `{i} ∪ graph[i]`, each attribute
/// (position, raw quaternion, activated scale, activated opacity, radiance
/// coefficients, effective skinning weights) contributes the population
/// standard deviation per dimension averaged over its dimensions. Then
/// `λ_W (‖Δw_i‖ + ‖W̃_i‖) + λ_s max_k s_ik` is added.
pub fn gaussian_reg_loss(
    set: &GaussianSet,
    weights: Option<&SkinningWeights>,
    graph: &[Vec<usize>],
    lambda_w: f64,
    lambda_s: f64,
) -> Result<(f64, RegGrads)> {
    let n = set.len();
    if graph.len() != n {
        return Err(Error::dim(format!("neighbour graph covers {} Gaussians, set has {n}", graph.len())));
    }
    if let Some(w) = weights {
        if w.len() != n {
            return Err(Error::dim(format!("skinning weights cover {} Gaussians, set has {n}", w.len())));
        }
    }
    let mut grads = GaussianGrads::zeros_like(set);
    let joints = weights.map_or(0, |w| w.joints);
    let mut delta = vec![0.0; n * joints];
    if n == 0 {
        return Ok((0.0, RegGrads { set: grads, delta }));
    }

    let scales: Vec<f64> = set.log_scales.iter().map(|v| v.exp()).collect();
    let opac: Vec<f64> = (0..n).map(|i| set.opacity(i)).collect();
    let eff: Vec<f64> = match weights {
        Some(w) => w.base.iter().zip(&w.delta).map(|(a, b)| a + b).collect(),
        None => Vec::new(),
    };
    let stride = set.sh_stride();
    let inv_n = 1.0 / n as f64;

    // Gradients w.r.t. activated scale, activated opacity and W̃.
    let mut g_scale = vec![0.0; 3 * n];
    let mut g_opac = vec![0.0; n];
    let mut g_eff = vec![0.0; n * joints];

    let mut total = 0.0;
    let mut nb = Vec::new();
    for i in 0..n {
        nb.clear();
        nb.push(i);
        nb.extend(graph[i].iter().copied().filter(|&j| j != i));
        if let Some(&j) = nb.iter().find(|&&j| j >= n) {
            return Err(Error::invalid(format!("neighbour {j} out of range")));
        }
        let mut value = 0.0;
        let attr = |data: &[f64], dim: usize, out: &mut [f64], value: &mut f64| {
            if dim == 0 {
                return;
            }
            let rows: Vec<&[f64]> = nb.iter().map(|&j| &data[dim * j..dim * (j + 1)]).collect();
            let mut local = vec![vec![0.0; dim]; nb.len()];
            std_term(&rows, inv_n / dim as f64, value, &mut local);
            for (g, &j) in local.iter().zip(&nb) {
                for d in 0..dim {
                    out[dim * j + d] += g[d];
                }
            }
        };
        attr(&set.means, 3, &mut grads.means, &mut value);
        attr(&set.quats, 4, &mut grads.quats, &mut value);
        attr(&scales, 3, &mut g_scale, &mut value);
        attr(&opac, 1, &mut g_opac, &mut value);
        attr(&set.sh, stride, &mut grads.sh, &mut value);
        attr(&eff, joints, &mut g_eff, &mut value);
        total += value;

        if let Some(w) = weights {
            let dw = w.delta_row(i);
            let e = &eff[joints * i..joints * (i + 1)];
            let (nd, ne) = (norm(dw), norm(e));
            total += lambda_w * inv_n * (nd + ne);
            for k in 0..joints {
                if nd > 0.0 {
                    delta[joints * i + k] += lambda_w * inv_n * dw[k] / nd;
                }
                if ne > 0.0 {
                    g_eff[joints * i + k] += lambda_w * inv_n * e[k] / ne;
                }
            }
        }
        let s = &scales[3 * i..3 * i + 3];
        let arg = (0..3).fold(0, |b, k| if s[k] > s[b] { k } else { b });
        total += lambda_s * inv_n * s[arg];
        g_scale[3 * i + arg] += lambda_s * inv_n;
    }

    for k in 0..3 * n {
        grads.log_scales[k] += g_scale[k] * scales[k];
    }
    for i in 0..n {
        grads.opacity_logits[i] += g_opac[i] * opac[i] * (1.0 - opac[i]);
    }
    for k in 0..n * joints {
        delta[k] += g_eff[k];
    }
    Ok((total, RegGrads { set: grads, delta }))
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{self, Quat, Vec3};
    use approx::assert_relative_eq;

    #[test]
    fn identical_attributes_leave_scale_term() {
        let mut set = GaussianSet::empty("body", 0);
        for _ in 0..6 {
            set.push(Vec3::new(0.1, 0.2, 0.3), Quat::new(1.0, 0.0, 0.0, 0.0), Vec3::new(-2.0, -1.0, -3.0), 0.4, &[0.1, 0.2, 0.3]);
        }
        let w = SkinningWeights::rigid(2, 6, 1);
        let graph: Vec<Vec<usize>> = (0..6).map(|i| (0..6).filter(|&j| j != i).take(4).collect()).collect();
        let (v, _) = gaussian_reg_loss(&set, Some(&w), &graph, 0.0, 0.01).unwrap();
        assert_relative_eq!(v, 0.01 * (-1.0f64).exp(), epsilon = 1e-15);
    }

    #[test]
    fn two_point_opacity_spread() {
        let mut set = GaussianSet::empty("body", 0);
        let (lo, hi) = (0.4, 0.6);
        for o in [lo, hi] {
            set.push(Vec3::zeros(), Quat::new(1.0, 0.0, 0.0, 0.0), Vec3::zeros(), math::logit(o), &[0.0; 3]);
        }
        let graph = vec![vec![1], vec![0]];
        let (v, _) = gaussian_reg_loss(&set, None, &graph, 0.0, 0.0).unwrap();
        // Each member's neighbourhood has opacity std 0.1; the mean over members is 0.1.
        assert_relative_eq!(v, 0.1, epsilon = 1e-12);
    }
}
