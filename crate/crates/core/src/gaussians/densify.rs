use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::GaussianSet;
use crate::error::{Error, Result};
use crate::math::Vec3;

/// Adaptive-control thresholds.
#[derive(Clone, Debug, PartialEq)]
pub struct DensifyThresholds {
    /// Mean screen-space positional gradient (NDC units) above which a
    /// Gaussian is cloned or split.
    pub grad: f64,
    /// Activated opacity below which a Gaussian is removed.
    pub min_opacity: f64,
    /// Scale divisor applied to split children.
    pub split_factor: f64,
    /// Largest activated scale axis (meters) above which a Gaussian is split
    /// rather than cloned.
    pub split_scale: f64,
    /// Upper bound on the set size after densification.
    pub max_count: usize,
    pub seed: u64,
}

impl Default for DensifyThresholds {
    fn default() -> Self {
        Self { grad: 2e-4, min_opacity: 0.005, split_factor: 1.6, split_scale: 0.01, max_count: usize::MAX, seed: 0 }
    }
}

/// Running mean of `|dL/dμ₂d|` per Gaussian over the frames in which it was
/// visible.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DensifyStats {
    pub grad_sum: Vec<f64>,
    pub visible_count: Vec<u32>,
}

impl DensifyStats {
    pub fn new(n: usize) -> Self {
        Self { grad_sum: vec![0.0; n], visible_count: vec![0; n] }
    }

    pub fn len(&self) -> usize {
        self.grad_sum.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grad_sum.is_empty()
    }

    pub fn record(&mut self, mean2d_grad: &[f64], visible: &[bool]) {
        for i in 0..self.grad_sum.len() {
            if visible[i] {
                self.grad_sum[i] += mean2d_grad[i];
                self.visible_count[i] += 1;
            }
        }
    }

    pub fn mean(&self, i: usize) -> f64 {
        match self.visible_count[i] {
            0 => 0.0,
            c => self.grad_sum[i] / c as f64,
        }
    }

    pub fn reset(&mut self, n: usize) {
        *self = Self::new(n);
    }
}

/// Result of [`densify_and_prune`]. `origin[j]` is the input Gaussian that
/// output `j` derives from; `fresh[j]` is true for newly created clones and
/// split children, whose optimizer state starts from zero.
#[derive(Clone, Debug)]
pub struct DensifyOutcome {
    pub set: GaussianSet,
    pub origin: Vec<usize>,
    pub fresh: Vec<bool>,
    pub cloned: usize,
    pub split: usize,
    pub pruned: usize,
}

/// Clones small high-gradient Gaussians, splits large ones into two children
/// and removes nearly transparent ones.
///
/// Output order: surviving originals (in input order), then clones, then
/// split children. Split parents are removed.
pub fn densify_and_prune(set: &GaussianSet, stats: &DensifyStats, th: &DensifyThresholds) -> Result<DensifyOutcome> {
    let n = set.len();
    if stats.len() != n {
        return Err(Error::dim(format!("densify statistics cover {} Gaussians, set has {n}", stats.len())));
    }
    let mut candidates: Vec<(usize, f64)> =
        (0..n).map(|i| (i, stats.mean(i))).filter(|&(_, g)| g >= th.grad && g > 0.0).collect();
    candidates.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));

    // Each clone adds one Gaussian, each split adds one net Gaussian.
    let budget = th.max_count.saturating_sub(n);
    candidates.truncate(budget);
    candidates.sort_by_key(|c| c.0);

    let max_scale = |i: usize| set.scale(i).max();
    let mut clone_ids = Vec::new();
    let mut split_ids = Vec::new();
    for &(i, _) in &candidates {
        if max_scale(i) > th.split_scale {
            split_ids.push(i);
        } else {
            clone_ids.push(i);
        }
    }

    let mut is_split = vec![false; n];
    split_ids.iter().for_each(|&i| is_split[i] = true);

    let mut out = GaussianSet::empty(set.entity.clone(), set.sh_degree);
    let mut origin = Vec::new();
    let mut fresh = Vec::new();
    for i in (0..n).filter(|&i| !is_split[i]) {
        out.push_from(set, i);
        origin.push(i);
        fresh.push(false);
    }
    for &i in &clone_ids {
        out.push_from(set, i);
        origin.push(i);
        fresh.push(true);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(th.seed);
    let shrink = th.split_factor.ln();
    for &i in &split_ids {
        let rot = set.rotation(i);
        let scale = set.scale(i);
        for _ in 0..2 {
            let z = sample_clamped(&mut rng, 3.0);
            let mean = set.mean(i) + rot * scale.component_mul(&z);
            let log_scale = set.log_scale(i).add_scalar(-shrink);
            out.push(mean, set.raw_quat(i), log_scale, set.opacity_logits[i], set.sh_row(i));
            origin.push(i);
            fresh.push(true);
        }
    }

    let keep: Vec<usize> = (0..out.len()).filter(|&j| out.opacity(j) >= th.min_opacity).collect();
    let pruned = out.len() - keep.len();
    if keep.is_empty() {
        return Err(Error::OverPruned(set.entity.clone()));
    }
    let set_out = if pruned == 0 { out } else { out.select(&keep) };
    Ok(DensifyOutcome {
        set: set_out,
        origin: keep.iter().map(|&j| origin[j]).collect(),
        fresh: keep.iter().map(|&j| fresh[j]).collect(),
        cloned: clone_ids.len(),
        split: split_ids.len(),
        pruned,
    })
}

/// Standard normal 3-vector, radially clamped to `radius`.
fn sample_clamped(rng: &mut ChaCha8Rng, radius: f64) -> Vec3 {
    let mut z = Vec3::from_fn(|_, _| StandardNormal.sample(rng));
    let r = z.norm();
    if r > radius {
        z *= radius / r;
    }
    z
}
