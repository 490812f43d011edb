//! The JSON run configuration. Every section is optional; unknown keys are
//! rejected.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use cpn_core::bm::MaskConfig;
use cpn_core::dataio::{Subset, SynthConfig};
use cpn_core::eval::tiou_thresholds;
use cpn_core::model::ModelConfig;
use cpn_core::postprocess::PostprocessConfig;
use cpn_core::preprocess::PreprocessConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub paths: Paths,
    pub synth: SynthConfig,
    pub grid: GridConfig,
    pub mask: MaskConfig,
    pub model: ModelSection,
    pub preprocess: PreprocessConfig,
    pub postprocess: PostprocessConfig,
    pub eval: EvalConfig,
    pub ensemble: EnsembleConfig,
}

/// Artifact locations. Unset inputs default to the files the earlier
/// commands write under `out`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub out: PathBuf,
    pub annotations: Option<PathBuf>,
    pub features: Option<PathBuf>,
    pub class_scores: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub proposals: Option<PathBuf>,
    pub detections: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            out: PathBuf::from("cpn_out"),
            annotations: None,
            features: None,
            class_scores: None,
            model: None,
            proposals: None,
            detections: None,
        }
    }
}

impl Paths {
    fn or_out(&self, path: &Option<PathBuf>, name: &str) -> PathBuf {
        path.clone().unwrap_or_else(|| self.out.join(name))
    }

    pub fn annotations(&self) -> PathBuf {
        self.or_out(&self.annotations, "annotations.json")
    }

    pub fn features(&self) -> PathBuf {
        self.or_out(&self.features, "features")
    }

    pub fn class_scores(&self) -> PathBuf {
        self.or_out(&self.class_scores, "class_scores.json")
    }

    pub fn model(&self) -> PathBuf {
        self.or_out(&self.model, "model.cpnm")
    }

    pub fn proposals(&self) -> PathBuf {
        self.or_out(&self.proposals, "proposals.json")
    }

    pub fn detections(&self) -> PathBuf {
        self.or_out(&self.detections, "detections.json")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    #[serde(rename = "T")]
    pub len: usize,
    #[serde(rename = "D")]
    pub durations: usize,
    #[serde(rename = "N")]
    pub samples: usize,
    pub expansion: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        let m = ModelConfig::default();
        Self { len: m.len, durations: m.durations, samples: m.samples, expansion: m.expansion }
    }
}

/// Network and optimiser keys of [`ModelConfig`] not covered by `grid`,
/// `mask` and `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub input_channels: usize,
    pub hidden_channels: usize,
    pub base_kernel: usize,
    pub boundary_kernel: usize,
    pub plane_kernel: usize,
    pub lambda_cls: f64,
    pub lambda_reg: f64,
    pub positive_iou: f64,
    pub reg_high_iou: f64,
    pub reg_low_iou: f64,
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::default();
        Self {
            input_channels: m.input_channels,
            hidden_channels: m.hidden_channels,
            base_kernel: m.base_kernel,
            boundary_kernel: m.boundary_kernel,
            plane_kernel: m.plane_kernel,
            lambda_cls: m.lambda_cls,
            lambda_reg: m.lambda_reg,
            positive_iou: m.positive_iou,
            reg_high_iou: m.reg_high_iou,
            reg_low_iou: m.reg_low_iou,
            learning_rate: m.learning_rate,
            momentum: m.momentum,
            epochs: m.epochs,
            batch_size: m.batch_size,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Videos used by `infer`, the evaluations and `ensemble`.
    pub subset: Subset,
    pub thresholds: Vec<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { subset: Subset::Validation, thresholds: tiou_thresholds() }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnsembleConfig {
    /// Run directories whose `outputs/` are fused.
    pub inputs: Vec<PathBuf>,
    /// One weight per input; equal weights when empty.
    pub weights: Vec<f64>,
    /// Common scale; defaults to the first input's.
    #[serde(rename = "T")]
    pub len: Option<usize>,
    #[serde(rename = "D")]
    pub durations: Option<usize>,
}

impl RunConfig {
    pub fn from_json_str(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::from_json_str(&text).with_context(|| format!("invalid config {}", path.display()))
    }

    pub fn model_config(&self) -> ModelConfig {
        let m = &self.model;
        ModelConfig {
            input_channels: m.input_channels,
            hidden_channels: m.hidden_channels,
            base_kernel: m.base_kernel,
            boundary_kernel: m.boundary_kernel,
            plane_kernel: m.plane_kernel,
            len: self.grid.len,
            durations: self.grid.durations,
            samples: self.grid.samples,
            expansion: self.grid.expansion,
            mask: self.mask,
            lambda_cls: m.lambda_cls,
            lambda_reg: m.lambda_reg,
            positive_iou: m.positive_iou,
            reg_high_iou: m.reg_high_iou,
            reg_low_iou: m.reg_low_iou,
            learning_rate: m.learning_rate,
            momentum: m.momentum,
            epochs: m.epochs,
            batch_size: m.batch_size,
            seed: self.seed,
        }
    }

    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig { seed: self.seed, ..self.synth.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        self.model_config().validate()?;
        self.preprocess.validate()?;
        self.postprocess.validate()?;
        if self.eval.thresholds.is_empty() || self.eval.thresholds.iter().any(|t| !(0.0..=1.0).contains(t)) {
            anyhow::bail!(cpn_core::Error::InfeasibleConfig("eval.thresholds must be non-empty values in [0, 1]".into()));
        }
        Ok(())
    }
}
