use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interp::Interpolation;

/// Network shape and training schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiaeConfig {
    /// Latent width `J`.
    pub rank: usize,
    /// Unrolled stages `K`.
    pub stages: usize,
    pub leaky_slope: f64,
    pub iterations: usize,
    /// Patches per iteration.
    pub batch: usize,
    /// Patch side on the HR grid.
    pub patch: usize,
    pub stride: usize,
    pub learning_rate: f64,
    /// Iterations run at the base rate before the linear decay starts.
    pub decay_start: usize,
    /// Length of the linear decay to zero.
    pub decay_length: usize,
    pub interpolation: Interpolation,
    pub seed: u64,
}

impl Default for MiaeConfig {
    fn default() -> Self {
        Self {
            rank: 80,
            stages: 3,
            leaky_slope: 0.01,
            iterations: 10_000,
            batch: 25,
            patch: 40,
            stride: 24,
            learning_rate: 5e-3,
            decay_start: 1000,
            decay_length: 9000,
            interpolation: Interpolation::Bilinear,
            seed: 0,
        }
    }
}

impl MiaeConfig {
    /// Checks the configuration against the problem size.
    pub fn validate(&self, hsi_bands: usize, height: usize, width: usize, ratio: usize) -> Result<()> {
        if self.rank == 0 || self.rank >= hsi_bands.min(height * width) {
            return Err(Error::arg(format!(
                "rank {} must lie in [1, min({hsi_bands}, {}))",
                self.rank,
                height * width
            )));
        }
        if self.stages == 0 {
            return Err(Error::arg("at least one stage is required"));
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            return Err(Error::arg(format!(
                "leaky slope must lie in (0, 1), got {}",
                self.leaky_slope
            )));
        }
        if self.batch == 0 {
            return Err(Error::arg("batch size must be positive"));
        }
        if ratio == 0 || self.patch == 0 || self.stride == 0 {
            return Err(Error::arg("ratio, patch and stride must be positive"));
        }
        if self.patch % ratio != 0 || self.stride % ratio != 0 {
            return Err(Error::arg(format!(
                "patch {} and stride {} must be multiples of the ratio {ratio}",
                self.patch, self.stride
            )));
        }
        if self.patch > height || self.patch > width {
            return Err(Error::arg(format!(
                "patch {} exceeds the {height}×{width} image",
                self.patch
            )));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::arg("learning rate must be positive"));
        }
        if self.decay_length == 0 {
            return Err(Error::arg("decay length must be positive"));
        }
        Ok(())
    }
}

/// Base rate held for `decay_start` iterations, then decayed linearly to zero
/// over `decay_length` iterations. `iteration` counts from 1.
pub fn lr_schedule(iteration: usize, base: f64, decay_start: usize, decay_length: usize) -> f64 {
    let over = iteration.saturating_sub(decay_start) as f64;
    base * (1.0 - over / decay_length as f64).max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_points() {
        let base = 5e-3;
        assert_eq!(lr_schedule(1, base, 1000, 9000), base);
        assert_eq!(lr_schedule(1000, base, 1000, 9000), base);
        assert_eq!(lr_schedule(10_000, base, 1000, 9000), 0.0);
        assert_eq!(lr_schedule(12_000, base, 1000, 9000), 0.0);
        assert!((lr_schedule(5500, base, 1000, 9000) - base * 0.5).abs() < 1e-18);
    }

    #[test]
    fn validation() {
        let cfg = MiaeConfig::default();
        assert!(cfg.validate(103, 512, 256, 8).is_ok());
        assert!(cfg.validate(60, 512, 256, 8).is_err());
        let odd = MiaeConfig {
            stride: 20,
            ..MiaeConfig::default()
        };
        assert!(odd.validate(103, 512, 256, 8).is_err());
        let zero = MiaeConfig {
            stages: 0,
            ..MiaeConfig::default()
        };
        assert!(zero.validate(103, 512, 256, 8).is_err());
    }
}
