use crate::error::{Error, Result};

/// Base skinning weights plus learnable corrections, stored row-per-Gaussian
/// (`N x joints`). Effective weights are the plain sum; they are not
/// renormalized.
#[derive(Clone, Debug, PartialEq)]
pub struct SkinningWeights {
    pub joints: usize,
    pub base: Vec<f64>,
    pub delta: Vec<f64>,
}

impl SkinningWeights {
    /// Validates that every base row is a partition of unity; deltas start at
    /// zero.
    pub fn new(joints: usize, base: Vec<f64>) -> Result<Self> {
        if joints == 0 || base.len() % joints != 0 {
            return Err(Error::dim(format!("{} weights do not form rows of {joints}", base.len())));
        }
        for (i, row) in base.chunks_exact(joints).enumerate() {
            let sum: f64 = row.iter().sum();
            if row.iter().any(|w| !w.is_finite() || *w < 0.0) || (sum - 1.0).abs() > 1e-6 {
                return Err(Error::invalid(format!("base weights of Gaussian {i} are not a partition of unity")));
            }
        }
        let delta = vec![0.0; base.len()];
        Ok(Self { joints, base, delta })
    }

    /// Every Gaussian bound fully to a single joint.
    pub fn rigid(joints: usize, n: usize, joint: usize) -> Self {
        let mut base = vec![0.0; joints * n];
        for i in 0..n {
            base[i * joints + joint] = 1.0;
        }
        Self { joints, delta: vec![0.0; base.len()], base }
    }

    pub fn empty(joints: usize) -> Self {
        Self { joints, base: Vec::new(), delta: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.base.len() / self.joints.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.base.is_empty()
    }

    pub fn base_row(&self, i: usize) -> &[f64] {
        &self.base[i * self.joints..(i + 1) * self.joints]
    }

    pub fn delta_row(&self, i: usize) -> &[f64] {
        &self.delta[i * self.joints..(i + 1) * self.joints]
    }

    /// `W + Δw` for Gaussian `i`.
    pub fn effective(&self, i: usize) -> Vec<f64> {
        self.base_row(i).iter().zip(self.delta_row(i)).map(|(w, d)| w + d).collect()
    }

    pub fn push(&mut self, base: &[f64], delta: &[f64]) {
        self.base.extend_from_slice(base);
        self.delta.extend_from_slice(delta);
    }

    /// Rows at `indices`, in order. Deltas are copied unless `reset_delta`.
    pub fn select(&self, indices: &[usize], reset_delta: bool) -> Self {
        let mut out = Self::empty(self.joints);
        let zero = vec![0.0; self.joints];
        for &i in indices {
            out.push(self.base_row(i), if reset_delta { &zero } else { self.delta_row(i) });
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.base.len() != self.delta.len() || self.joints == 0 || self.base.len() % self.joints != 0 {
            return Err(Error::dim("skinning weight arrays are inconsistent"));
        }
        match self.base.iter().chain(&self.delta).position(|v| !v.is_finite()) {
            Some(p) => Err(Error::NonFinite { what: "skinning weight", index: (p % self.base.len()) / self.joints }),
            None => Ok(()),
        }
    }
}
