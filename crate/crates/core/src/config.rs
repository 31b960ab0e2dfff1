//! Run configuration and seed derivation.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fidelity::{GuardThresholds, DEFAULT_PAIR_COUNT};
use crate::interchange::{DEFAULT_CONF_THRESHOLD, DEFAULT_JUMP_FRACTION};
use crate::metrics::rigidity::DEFAULT_MAX_PAIRS;
use crate::observation::DEFAULT_MIN_FG_POINTS;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("weights must be finite and non-negative, got {0:?}")]
    NegativeWeight([f64; 3]),
    #[error("weights must sum to 1 (got {0})")]
    WeightSum(f64),
    #[error("cannot parse weights {0:?}: expected three comma-separated numbers")]
    WeightSyntax(String),
    #[error("{0}")]
    Invalid(String),
}

/// Component weights in the order (scale, traj, rigidity).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PdiWeights {
    pub w_scale: f64,
    pub w_traj: f64,
    pub w_rigidity: f64,
}

impl Default for PdiWeights {
    fn default() -> Self {
        Self { w_scale: 0.4, w_traj: 0.4, w_rigidity: 0.2 }
    }
}

impl PdiWeights {
    pub fn new(w_scale: f64, w_traj: f64, w_rigidity: f64) -> Result<Self, ConfigError> {
        let w = Self { w_scale, w_traj, w_rigidity };
        w.validate()?;
        Ok(w)
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.w_scale, self.w_traj, self.w_rigidity]
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let w = self.as_array();
        if w.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(ConfigError::NegativeWeight(w));
        }
        let sum: f64 = w.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(ConfigError::WeightSum(sum));
        }
        Ok(())
    }

    /// Weights restricted to the available components and rescaled to sum
    /// to 1. All zeros when nothing with positive weight is available.
    pub fn renormalized(&self, available: [bool; 3]) -> [f64; 3] {
        let w = self.as_array();
        let kept: [f64; 3] = std::array::from_fn(|i| if available[i] { w[i] } else { 0.0 });
        let sum: f64 = kept.iter().sum();
        if sum <= 0.0 {
            return [0.0; 3];
        }
        kept.map(|x| x / sum)
    }
}

impl std::str::FromStr for PdiWeights {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| ConfigError::WeightSyntax(s.to_string()))?;
        match parts.as_slice() {
            [a, b, c] => Self::new(*a, *b, *c),
            _ => Err(ConfigError::WeightSyntax(s.to_string())),
        }
    }
}

/// Everything that influences per-video evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub weights: PdiWeights,
    pub thresholds: GuardThresholds,
    pub guard_pairs: usize,
    pub conf_threshold: f64,
    pub jump_fraction: f64,
    pub min_fg_points: usize,
    /// Odd window of the centroid median filter.
    pub smoothing_window: usize,
    pub max_anchor_pairs: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            weights: PdiWeights::default(),
            thresholds: GuardThresholds::default(),
            guard_pairs: DEFAULT_PAIR_COUNT,
            conf_threshold: DEFAULT_CONF_THRESHOLD,
            jump_fraction: DEFAULT_JUMP_FRACTION,
            min_fg_points: DEFAULT_MIN_FG_POINTS,
            smoothing_window: 3,
            max_anchor_pairs: DEFAULT_MAX_PAIRS,
            seed: 0,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.weights.validate()?;
        if self.smoothing_window % 2 == 0 {
            return Err(ConfigError::Invalid(format!("smoothing window must be odd, got {}", self.smoothing_window)));
        }
        if self.max_anchor_pairs == 0 {
            return Err(ConfigError::Invalid("max_anchor_pairs must be positive".into()));
        }
        Ok(())
    }
}

/// Aggregation settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReportConfig {
    pub tau: f64,
    pub resamples: usize,
    pub level: f64,
    pub seed: u64,
}

impl Default for ReportConfig {
    fn default() -> Self {
        Self { tau: 1.0, resamples: 2000, level: 0.95, seed: 0 }
    }
}

impl ReportConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.tau > 0.0) {
            return Err(ConfigError::Invalid(format!("tau must be positive, got {}", self.tau)));
        }
        if self.resamples == 0 {
            return Err(ConfigError::Invalid("resamples must be positive".into()));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(ConfigError::Invalid(format!("level must lie in (0, 1), got {}", self.level)));
        }
        Ok(())
    }
}

/// 64-bit FNV-1a.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ *b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

/// Child seed for a named sub-task, independent of scheduling order.
pub fn derive_seed(root: u64, key: &str) -> u64 {
    root ^ fnv1a(key.as_bytes())
}
