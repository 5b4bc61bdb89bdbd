use crate::error::{Error, Result};
use crate::math::{Mat3, Vec3};

/// Gradients of [`iso_loss`] w.r.t. both states.
#[derive(Clone, Debug, PartialEq)]
pub struct IsoGrads {
    pub means: Vec<Vec3>,
    pub covs: Vec<Mat3>,
    pub ref_means: Vec<Vec3>,
    pub ref_covs: Vec<Mat3>,
}

/// As-isometric-as-possible penalty over a fixed neighbour graph:
/// `Σ_i Σ_{j∈N(i)} λ_μ |‖μ_i − μ_j‖ − ‖μ⁰_i − μ⁰_j‖| + λ_Σ |‖Σ_i − Σ_j‖_F − ‖Σ⁰_i − Σ⁰_j‖_F|`.
pub fn iso_loss(
    means: &[Vec3],
    covs: &[Mat3],
    ref_means: &[Vec3],
    ref_covs: &[Mat3],
    graph: &[Vec<usize>],
    lambda_mu: f64,
    lambda_sigma: f64,
) -> Result<(f64, IsoGrads)> {
    let n = means.len();
    if covs.len() != n || ref_means.len() != n || ref_covs.len() != n || graph.len() != n {
        return Err(Error::dim("isometry inputs disagree on Gaussian count"));
    }
    let mut g = IsoGrads {
        means: vec![Vec3::zeros(); n],
        covs: vec![Mat3::zeros(); n],
        ref_means: vec![Vec3::zeros(); n],
        ref_covs: vec![Mat3::zeros(); n],
    };
    let mut total = 0.0;
    for (i, row) in graph.iter().enumerate() {
        for &j in row {
            if j >= n {
                return Err(Error::invalid(format!("neighbour {j} out of range")));
            }
            if lambda_mu != 0.0 {
                let d = means[i] - means[j];
                let d0 = ref_means[i] - ref_means[j];
                let (l, l0) = (d.norm(), d0.norm());
                total += lambda_mu * (l - l0).abs();
                let s = lambda_mu * sign(l - l0);
                if l > 0.0 {
                    let u = d * (s / l);
                    g.means[i] += u;
                    g.means[j] -= u;
                }
                if l0 > 0.0 {
                    let u = d0 * (s / l0);
                    g.ref_means[i] -= u;
                    g.ref_means[j] += u;
                }
            }
            if lambda_sigma != 0.0 {
                let d = covs[i] - covs[j];
                let d0 = ref_covs[i] - ref_covs[j];
                let (l, l0) = (d.norm(), d0.norm());
                total += lambda_sigma * (l - l0).abs();
                let s = lambda_sigma * sign(l - l0);
                if l > 0.0 {
                    let u = d * (s / l);
                    g.covs[i] += u;
                    g.covs[j] -= u;
                }
                if l0 > 0.0 {
                    let u = d0 * (s / l0);
                    g.ref_covs[i] -= u;
                    g.ref_covs[j] += u;
                }
            }
        }
    }
    Ok((total, g))
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::knn::knn_graph;
    use crate::math;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};

    fn state(n: usize, seed: u64) -> (Vec<Vec3>, Vec<Mat3>) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let means = (0..n).map(|_| Vec3::from_fn(|_, _| rng.random_range(-1.0..1.0))).collect();
        let covs = (0..n)
            .map(|_| {
                let r = math::axis_angle_to_mat(&Vec3::from_fn(|_, _| rng.random_range(-2.0..2.0)));
                math::covariance_from(&r, &Vec3::from_fn(|_, _| rng.random_range(0.05..0.3)))
            })
            .collect();
        (means, covs)
    }

    #[test]
    fn identity_deformation_is_zero() {
        let (m, c) = state(30, 1);
        let g = knn_graph(&m, 5);
        assert_eq!(iso_loss(&m, &c, &m, &c, &g, 1.0, 0.1).unwrap().0, 0.0);
    }

    #[test]
    fn rigid_motion_is_invariant() {
        let (m, c) = state(30, 2);
        let g = knn_graph(&m, 5);
        let r = math::axis_angle_to_mat(&Vec3::new(0.7, -1.1, 0.4));
        let t = Vec3::new(3.0, -2.0, 0.5);
        let m2: Vec<Vec3> = m.iter().map(|p| r * p + t).collect();
        let c2: Vec<Mat3> = c.iter().map(|s| r * s * r.transpose()).collect();
        assert!(iso_loss(&m2, &c2, &m, &c, &g, 1.0, 0.1).unwrap().0 <= 1e-9);
    }

    #[test]
    fn doubled_positions() {
        let (m, c) = state(20, 3);
        let g = knn_graph(&m, 4);
        let m2: Vec<Vec3> = m.iter().map(|p| p * 2.0).collect();
        let mut expect = 0.0;
        for (i, row) in g.iter().enumerate() {
            for &j in row {
                expect += (m[i] - m[j]).norm();
            }
        }
        assert_relative_eq!(iso_loss(&m2, &c, &m, &c, &g, 1.0, 0.1).unwrap().0, expect, epsilon = 1e-12);
    }
}
