use serde::{Deserialize, Serialize};

use crate::bm::MaskConfig;
use crate::error::{Error, Result};

/// Architecture, loss and optimiser settings of the network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub input_channels: usize,
    pub hidden_channels: usize,
    pub base_kernel: usize,
    pub boundary_kernel: usize,
    pub plane_kernel: usize,
    /// Temporal scale `T` every sequence is resampled to.
    pub len: usize,
    /// Maximum proposal duration `D`.
    pub durations: usize,
    /// Sample points per proposal `N`.
    pub samples: usize,
    pub expansion: f64,
    pub mask: MaskConfig,
    pub lambda_cls: f64,
    pub lambda_reg: f64,
    /// Cells with IoU target above this are classification positives.
    pub positive_iou: f64,
    pub reg_high_iou: f64,
    pub reg_low_iou: f64,
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_channels: 16,
            hidden_channels: 16,
            base_kernel: 3,
            boundary_kernel: 3,
            plane_kernel: 3,
            len: 100,
            durations: 100,
            samples: 32,
            expansion: 0.25,
            mask: MaskConfig::default(),
            lambda_cls: 1.0,
            lambda_reg: 10.0,
            positive_iou: 0.9,
            reg_high_iou: 0.7,
            reg_low_iou: 0.3,
            learning_rate: 0.01,
            momentum: 0.9,
            epochs: 10,
            batch_size: 8,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        let counts = [
            ("input_channels", self.input_channels),
            ("hidden_channels", self.hidden_channels),
            ("len", self.len),
            ("durations", self.durations),
            ("batch_size", self.batch_size),
        ];
        for (name, v) in counts {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        for (name, k) in [
            ("base_kernel", self.base_kernel),
            ("boundary_kernel", self.boundary_kernel),
            ("plane_kernel", self.plane_kernel),
        ] {
            if k % 2 == 0 {
                return bad(format!("{name} must be odd, got {k}"));
            }
        }
        if self.durations > self.len {
            return bad(format!("durations {} exceeds len {}", self.durations, self.len));
        }
        if self.samples < 2 {
            return bad(format!("samples must be >= 2, got {}", self.samples));
        }
        if !(self.expansion >= 0.0) {
            return bad("expansion must be >= 0".into());
        }
        if !(self.lambda_cls >= 0.0 && self.lambda_reg >= 0.0) {
            return bad("loss weights must be >= 0".into());
        }
        if !(self.learning_rate > 0.0 && (0.0..1.0).contains(&self.momentum)) {
            return bad("need learning_rate > 0 and momentum in [0, 1)".into());
        }
        if !(self.reg_low_iou <= self.reg_high_iou) {
            return bad("reg_low_iou must not exceed reg_high_iou".into());
        }
        self.mask.validate()
    }
}
