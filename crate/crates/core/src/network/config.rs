use serde::{Deserialize, Serialize};

use super::builder::{Architecture, YoloBuilder};
use super::graph::NetworkSpec;
use super::Result;
use crate::activations::ActivationKind;

/// `[network]` table of the experiment config: either a builder preset or an
/// explicit node list.
///
/// ```toml
/// [network]
/// preset = "improved"
/// num_classes = 4
/// input_size = 416
/// width_mult = 0.125
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "snake_case")]
pub enum NetworkConfig {
    Improved(PresetParams),
    Reference(PresetParams),
    Custom(NetworkSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PresetParams {
    pub num_classes: usize,
    pub input_size: usize,
    #[serde(default = "default_width")]
    pub width_mult: f64,
    #[serde(default = "default_anchors")]
    pub num_anchors: usize,
    #[serde(default)]
    pub backbone_activation: Option<ActivationKind>,
    #[serde(default)]
    pub neck_activation: Option<ActivationKind>,
    #[serde(default = "default_depth")]
    pub neck_depth: usize,
}

fn default_width() -> f64 {
    1.0
}
fn default_anchors() -> usize {
    3
}
fn default_depth() -> usize {
    1
}

impl PresetParams {
    fn builder(&self, arch: Architecture) -> YoloBuilder {
        let base = match arch {
            Architecture::Improved => YoloBuilder::improved(self.num_classes, self.input_size),
            Architecture::Reference => YoloBuilder::reference(self.num_classes, self.input_size),
        };
        YoloBuilder {
            width_mult: self.width_mult,
            num_anchors: self.num_anchors,
            backbone_activation: self.backbone_activation.unwrap_or(base.backbone_activation),
            neck_activation: self.neck_activation.unwrap_or(base.neck_activation),
            neck_depth: self.neck_depth,
            ..base
        }
    }
}

impl NetworkConfig {
    pub fn build(&self) -> Result<NetworkSpec> {
        let spec = match self {
            Self::Improved(p) => p.builder(Architecture::Improved).build(Architecture::Improved)?,
            Self::Reference(p) => p.builder(Architecture::Reference).build(Architecture::Reference)?,
            Self::Custom(spec) => spec.clone(),
        };
        spec.topo_order()?;
        Ok(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_from_toml() {
        let c: NetworkConfig = toml::from_str(
            r#"
            preset = "improved"
            num_classes = 4
            input_size = 64
            width_mult = 0.125
            "#,
        )
        .unwrap();
        let r = c.build().unwrap().infer_shapes().unwrap();
        assert_eq!(r.head_shapes(), vec![[8, 8, 27], [4, 4, 27], [2, 2, 27]]);
    }

    #[test]
    fn reference_overrides_activation() {
        let c: NetworkConfig = toml::from_str(
            r#"
            preset = "reference"
            num_classes = 1
            input_size = 96
            neck_activation = { kind = "swish" }
            "#,
        )
        .unwrap();
        let NetworkConfig::Reference(p) = &c else { panic!() };
        let b = p.builder(Architecture::Reference);
        assert_eq!(b.neck_activation, ActivationKind::Swish);
        assert_eq!(b.backbone_activation, ActivationKind::Mish);
    }

    #[test]
    fn custom_node_list_from_toml() {
        let c: NetworkConfig = toml::from_str(
            r#"
            preset = "custom"
            input_shape = [32, 32, 3]
            outputs = ["a", "b", "c"]

            [[nodes]]
            id = "stem"
            inputs = ["input"]
            layer = { type = "conv", out_channels = 8, kernel = 3, stride = 2, activation = { kind = "leaky_relu", slope = 0.1 } }

            [[nodes]]
            id = "a"
            inputs = ["stem"]
            layer = { type = "head", num_anchors = 3, num_classes = 4 }

            [[nodes]]
            id = "b"
            inputs = ["stem"]
            layer = { type = "head", num_anchors = 3, num_classes = 4 }

            [[nodes]]
            id = "c"
            inputs = ["stem"]
            layer = { type = "head", num_anchors = 3, num_classes = 4 }
            "#,
        )
        .unwrap();
        let r = c.build().unwrap().infer_shapes().unwrap();
        assert_eq!(r.head_shapes(), vec![[16, 16, 27]; 3]);
    }

    #[test]
    fn bad_input_size_rejected() {
        let c: NetworkConfig = toml::from_str("preset = \"improved\"\nnum_classes = 4\ninput_size = 100\n").unwrap();
        assert!(c.build().is_err());
    }
}
