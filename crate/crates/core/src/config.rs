//! Model configuration and its TOML text format.
//!
//! ```toml
//! height = 64
//! width = 64
//! channels = [16, 32, 64, 128]
//! blocks = [1, 1, 2, 1]
//! state_dim = 8
//! mlp_ratio = 2
//! bins = 5
//! beta = 1.5
//! seed = 0
//! stage1_override = true
//! dense_baseline = false
//!
//! [egcm]
//! rho = 2.0
//! epsilon_r = 1e-4
//! sigma = 1.0
//! radius = 1
//! normalization = "max"   # "none" | "max" | "range"
//! ```
//!
//! Every key is optional; missing keys take the defaults shown.

use serde::{Deserialize, Serialize};

use crate::egms::{EgcmParams, EgmsOptions};
use crate::error::{Error, Result};
use crate::event::DEFAULT_BINS;
use crate::tokenize::{stage_configs, StageConfig, STAGE_STRIDES};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub height: usize,
    pub width: usize,
    pub channels: [usize; 4],
    pub blocks: [usize; 4],
    pub state_dim: usize,
    pub mlp_ratio: usize,
    pub bins: usize,
    pub beta: f64,
    pub seed: u64,
    pub stage1_override: bool,
    /// Force all-ones masks at every stage.
    pub dense_baseline: bool,
    pub egcm: EgcmParams,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            channels: [16, 32, 64, 128],
            blocks: [1, 1, 2, 1],
            state_dim: 8,
            mlp_ratio: 2,
            bins: DEFAULT_BINS,
            beta: crate::cmff::DEFAULT_BETA,
            seed: 0,
            stage1_override: true,
            dense_baseline: false,
            egcm: EgcmParams::default(),
        }
    }
}

/// Largest state dimension for which `exp(dt * A)` with `A = -state_dim`
/// and the maximum step size stays above the f64 underflow limit.
pub const MAX_STATE_DIM: usize = 64;

impl ModelConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ModelConfig = toml::from_str(text).map_err(|e| Error::parse("config", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let last = STAGE_STRIDES[3];
        if self.height == 0 || self.width == 0 || !self.height.is_multiple_of(last) || !self.width.is_multiple_of(last)
        {
            return Err(Error::InvalidParameter(format!(
                "input {}x{} must be a positive multiple of {last}",
                self.height, self.width
            )));
        }
        if self.height > u16::MAX as usize || self.width > u16::MAX as usize {
            return Err(Error::InvalidParameter("input larger than 65535 pixels".into()));
        }
        if self.channels.contains(&0) || self.blocks.contains(&0) {
            return Err(Error::InvalidParameter("channels and blocks must be >= 1".into()));
        }
        if self.state_dim == 0 || self.state_dim > MAX_STATE_DIM {
            return Err(Error::InvalidParameter(format!(
                "state_dim must lie in 1..={MAX_STATE_DIM}"
            )));
        }
        if self.mlp_ratio == 0 || self.bins == 0 {
            return Err(Error::InvalidParameter("mlp_ratio and bins must be >= 1".into()));
        }
        if !(self.beta > 0.0) {
            return Err(Error::InvalidParameter(format!("beta must be > 0, got {}", self.beta)));
        }
        self.egcm.validate()
    }

    pub fn stages(&self) -> Vec<StageConfig> {
        stage_configs(self.channels, self.blocks)
    }

    pub fn egms_options(&self) -> EgmsOptions {
        EgmsOptions {
            params: self.egcm,
            stage1_override: self.stage1_override,
        }
    }

    /// Token grid size at a 1-based stage.
    pub fn grid_size(&self, stage: usize) -> (usize, usize) {
        let stride = STAGE_STRIDES[stage - 1];
        (self.height / stride, self.width / stride)
    }
}
