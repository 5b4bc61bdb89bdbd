use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Adam moment decay rates and denominator epsilon.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-15 }
    }
}

/// Moments of one parameter array.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Moments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Moments {
    pub fn zeros(len: usize) -> Self {
        Self { m: vec![0.0; len], v: vec![0.0; len] }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// Bias-corrected update of `param` for step `t` (1-based).
    pub fn step(&mut self, param: &mut [f64], grad: &[f64], lr: f64, t: u64, p: &AdamParams) -> Result<()> {
        if param.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(Error::dim(format!(
                "optimizer tracks {} values, got {} parameters and {} gradients",
                self.m.len(),
                param.len(),
                grad.len()
            )));
        }
        let bc1 = 1.0 - p.beta1.powf(t as f64);
        let bc2 = 1.0 - p.beta2.powf(t as f64);
        for k in 0..param.len() {
            let g = grad[k];
            self.m[k] = p.beta1 * self.m[k] + (1.0 - p.beta1) * g;
            self.v[k] = p.beta2 * self.v[k] + (1.0 - p.beta2) * g * g;
            let m_hat = self.m[k] / bc1;
            let v_hat = self.v[k] / bc2;
            param[k] -= lr * m_hat / (v_hat.sqrt() + p.eps);
        }
        Ok(())
    }

    /// Rebuilds the moments after the owning array was reindexed: row `j`
    /// of the result copies row `origin[j]`, or starts at zero if `fresh[j]`.
    pub fn remap(&self, width: usize, origin: &[usize], fresh: &[bool]) -> Self {
        let mut out = Self::zeros(origin.len() * width);
        for (j, (&o, &f)) in origin.iter().zip(fresh).enumerate() {
            if !f {
                out.m[j * width..(j + 1) * width].copy_from_slice(&self.m[o * width..(o + 1) * width]);
                out.v[j * width..(j + 1) * width].copy_from_slice(&self.v[o * width..(o + 1) * width]);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_is_learning_rate() {
        let mut m = Moments::zeros(1);
        let mut x = [0.0];
        m.step(&mut x, &[1.0], 0.1, 1, &AdamParams::default()).unwrap();
        assert!((x[0] + 0.1 / (1.0 + 1e-15)).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_keeps_parameters_and_decays_moments() {
        let mut m = Moments::zeros(2);
        let mut x = [3.0, -1.0];
        m.step(&mut x, &[0.0, 0.0], 0.1, 1, &AdamParams::default()).unwrap();
        assert_eq!(x, [3.0, -1.0]);
        let mut decayed = Moments { m: vec![0.5], v: vec![0.25] };
        decayed.step(&mut [0.0], &[0.0], 0.0, 1, &AdamParams::default()).unwrap();
        assert!((decayed.m[0] - 0.45).abs() < 1e-15);
        assert!((decayed.v[0] - 0.24975).abs() < 1e-15);
    }

    #[test]
    fn remap_zeroes_fresh_rows() {
        let m = Moments { m: vec![1.0, 2.0, 3.0, 4.0], v: vec![5.0, 6.0, 7.0, 8.0] };
        let r = m.remap(2, &[1, 0, 1], &[false, false, true]);
        assert_eq!(r.m, vec![3.0, 4.0, 1.0, 2.0, 0.0, 0.0]);
        assert_eq!(r.v, vec![7.0, 8.0, 5.0, 6.0, 0.0, 0.0]);
    }

    #[test]
    fn mismatched_lengths_fail() {
        let mut m = Moments::zeros(2);
        assert!(m.step(&mut [0.0], &[0.0], 0.1, 1, &AdamParams::default()).is_err());
    }
}
