//! Two-phase fitting: entities first learn in isolation against their own
//! masks, then are refined together on the composite image with isometry and
//! collision regularizers.

mod adam;
mod trainer;

pub use adam::{AdamParams, Moments};
pub use trainer::{EntityOptim, Frame, LogRow, Phase, PhaseReport, TrainData, TrainState};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussians::DensifyThresholds;
use crate::splatting::RenderSettings;

/// Per-array Adam step sizes. Positions decay exponentially from `means`
/// to `means_final` over each phase.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearningRates {
    pub means: f64,
    pub means_final: f64,
    pub quats: f64,
    pub log_scales: f64,
    pub opacity: f64,
    pub sh: f64,
    pub delta: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self { means: 1.6e-4, means_final: 1.6e-6, quats: 1e-3, log_scales: 5e-3, opacity: 5e-2, sh: 2.5e-3, delta: 1e-4 }
    }
}

impl LearningRates {
    /// Position step size at `progress` in `[0, 1]` through a phase.
    pub fn means_at(&self, progress: f64) -> f64 {
        let t = progress.clamp(0.0, 1.0);
        self.means * (self.means_final / self.means).powf(t)
    }
}

/// Adaptive density control settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DensifyConfig {
    pub grad: f64,
    pub min_opacity: f64,
    pub split_factor: f64,
    pub split_scale: f64,
    /// Per-entity cap on Gaussian count. Absent: unbounded.
    pub max_gaussians: Option<usize>,
    /// No densification after this many isolation iterations. Absent: never stops.
    pub until: Option<u64>,
}

impl Default for DensifyConfig {
    fn default() -> Self {
        let d = DensifyThresholds::default();
        Self {
            grad: d.grad,
            min_opacity: d.min_opacity,
            split_factor: d.split_factor,
            split_scale: d.split_scale,
            max_gaussians: None,
            until: None,
        }
    }
}

impl DensifyConfig {
    pub fn thresholds(&self, seed: u64) -> DensifyThresholds {
        DensifyThresholds {
            grad: self.grad,
            min_opacity: self.min_opacity,
            split_factor: self.split_factor,
            split_scale: self.split_scale,
            max_count: self.max_gaussians.unwrap_or(usize::MAX),
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub isolation_epochs: usize,
    pub joint_epochs: usize,
    /// Densify-and-prune runs after every this many isolation iterations.
    pub densify_interval: u64,
    pub lr: LearningRates,
    pub adam: AdamParams,
    pub densify: DensifyConfig,
    pub seed: u64,
    pub background: [f64; 3],
    /// Frames visited per epoch, drawn from a seeded shuffle. Absent: all.
    pub frames_per_epoch: Option<usize>,
    /// Write a checkpoint every this many iterations. Absent: only at the end.
    pub checkpoint_interval: Option<u64>,
    /// Progress line on stderr every this many iterations; 0 is silent.
    pub log_interval: u64,
    pub render: RenderSettings,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            isolation_epochs: 3000,
            joint_epochs: 2000,
            densify_interval: 400,
            lr: LearningRates::default(),
            adam: AdamParams::default(),
            densify: DensifyConfig::default(),
            seed: 0,
            background: [0.0; 3],
            frames_per_epoch: None,
            checkpoint_interval: None,
            log_interval: 0,
            render: RenderSettings::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.densify_interval == 0 {
            return Err(Error::invalid("densify_interval must be at least 1"));
        }
        let lr = &self.lr;
        if [lr.means, lr.means_final, lr.quats, lr.log_scales, lr.opacity, lr.sh, lr.delta].iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::invalid("learning rates must be positive"));
        }
        let a = &self.adam;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.eps >= 0.0) {
            return Err(Error::invalid("Adam betas must lie in [0, 1) and eps be non-negative"));
        }
        if self.frames_per_epoch == Some(0) || self.checkpoint_interval == Some(0) {
            return Err(Error::invalid("frames_per_epoch and checkpoint_interval must be at least 1"));
        }
        if self.render.tile_size == 0 || !(self.render.alpha_max > 0.0 && self.render.alpha_max < 1.0) {
            return Err(Error::invalid("render tile_size must be positive and alpha_max in (0, 1)"));
        }
        if self.background.iter().any(|c| !c.is_finite()) {
            return Err(Error::invalid("background must be finite"));
        }
        Ok(())
    }
}
