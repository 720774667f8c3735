//! One TOML file describing an experiment: class names, network, anchors,
//! post-processing thresholds, evaluation settings and augmentation ops.
//! Every table is optional and falls back to the defaults below.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataio::{default_ops, AugmentOp};
use crate::metrics::MatchConfig;
use crate::network::{NetworkConfig, PresetParams};
use crate::postprocess::AnchorSet;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{}: {source}", path.display())]
    Io {
        path: std::path::PathBuf,
        source: std::io::Error,
    },
    #[error("config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PostprocessConfig {
    pub conf_threshold: f64,
    pub iou_threshold: f64,
}

impl Default for PostprocessConfig {
    fn default() -> Self {
        Self {
            conf_threshold: 0.3,
            iou_threshold: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub ops: Vec<AugmentOp>,
    /// Train/val/test fractions.
    pub split: (f64, f64, f64),
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            ops: default_ops(),
            split: (0.7, 0.15, 0.15),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub classes: Vec<String>,
    pub network: NetworkConfig,
    pub anchors: AnchorSet,
    pub postprocess: PostprocessConfig,
    pub eval: MatchConfig,
    pub augment: AugmentConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            classes: ["early_blight", "late_blight", "septoria_leaf_spot", "leaf_mold"]
                .map(String::from)
                .to_vec(),
            network: NetworkConfig::Improved(PresetParams {
                num_classes: 4,
                input_size: 416,
                width_mult: 1.0,
                num_anchors: 3,
                backbone_activation: None,
                neck_activation: None,
                neck_depth: 1,
            }),
            anchors: AnchorSet::default(),
            postprocess: PostprocessConfig::default(),
            eval: MatchConfig::default(),
            augment: AugmentConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let c: Self = toml::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |e: &dyn std::fmt::Display| ConfigError::Invalid(e.to_string());
        self.anchors.validate().map_err(|e| bad(&e))?;
        self.eval.validate().map_err(|e| bad(&e))?;
        for op in &self.augment.ops {
            op.validate().map_err(|e| bad(&e))?;
        }
        let p = &self.postprocess;
        if !(0.0..=1.0).contains(&p.conf_threshold) || !(p.iou_threshold > 0.0 && p.iou_threshold <= 1.0) {
            return Err(ConfigError::Invalid(format!(
                "postprocess thresholds conf {} / iou {} out of range",
                p.conf_threshold, p.iou_threshold
            )));
        }
        Ok(())
    }
}
