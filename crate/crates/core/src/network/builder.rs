//! Programmatic construction of the improved detector graph and of the
//! reference CSPDarknet53 + SPP + PANet graph it is compared against.

use serde::{Deserialize, Serialize};

use super::graph::{NetworkSpec, Node, INPUT};
use super::layer::{CspVariant, LayerSpec};
use super::{NetworkError, Result};
use crate::activations::ActivationKind;

pub const SPP_KERNELS: [usize; 3] = [5, 9, 13];

/// Ids of the three heads, finest grid first.
pub const HEAD_IDS: [&str; 3] = ["head_s8", "head_s16", "head_s32"];
/// Ids of the two dense stages of the improved backbone.
pub const DENSE_IDS: [&str; 2] = ["dense1", "dense2"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    /// Dense-CSPDarknet53 backbone with CSP1-n stages, SPP, and a PANet neck
    /// built from CSP2-n blocks.
    Improved,
    /// CSPDarknet53 + SPP + PANet with plain five-conv fusion stacks.
    Reference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct YoloBuilder {
    pub num_classes: usize,
    pub input_size: usize,
    #[serde(default = "one")]
    pub width_mult: f64,
    #[serde(default = "three")]
    pub num_anchors: usize,
    pub backbone_activation: ActivationKind,
    pub neck_activation: ActivationKind,
    /// Residual units in each neck CSP2 block.
    #[serde(default = "one_usize")]
    pub neck_depth: usize,
}

fn one() -> f64 {
    1.0
}
fn three() -> usize {
    3
}
fn one_usize() -> usize {
    1
}

impl YoloBuilder {
    /// Hard-swish in backbone and neck.
    pub fn improved(num_classes: usize, input_size: usize) -> Self {
        Self {
            num_classes,
            input_size,
            width_mult: 1.0,
            num_anchors: 3,
            backbone_activation: ActivationKind::HardSwish,
            neck_activation: ActivationKind::HardSwish,
            neck_depth: 1,
        }
    }

    /// Mish backbone, leaky-ReLU neck.
    pub fn reference(num_classes: usize, input_size: usize) -> Self {
        Self {
            backbone_activation: ActivationKind::Mish,
            neck_activation: ActivationKind::leaky_default(),
            ..Self::improved(num_classes, input_size)
        }
    }

    pub fn with_width(mut self, width_mult: f64) -> Self {
        self.width_mult = width_mult;
        self
    }

    fn validate(&self) -> Result<()> {
        if !self.input_size.is_multiple_of(32) || self.input_size < 64 {
            return Err(NetworkError::InputSize(self.input_size));
        }
        if self.num_classes == 0 || self.num_anchors == 0 || self.neck_depth == 0 {
            return Err(NetworkError::Invalid(
                "num_classes, num_anchors and neck_depth must be positive".into(),
            ));
        }
        if !(self.width_mult > 0.0 && self.width_mult.is_finite()) {
            return Err(NetworkError::Invalid(format!(
                "width multiplier {} must be positive",
                self.width_mult
            )));
        }
        Ok(())
    }

    /// Channel count scaled by the width multiplier, rounded to an even
    /// number of at least 2 so CSP halves stay integral.
    pub fn ch(&self, c: usize) -> usize {
        let v = (c as f64 * self.width_mult / 2.0).round() as usize * 2;
        v.max(2)
    }

    pub fn build(&self, arch: Architecture) -> Result<NetworkSpec> {
        self.validate()?;
        let mut g = Graph {
            b: self,
            nodes: Vec::new(),
        };
        let (p3, p4, p5) = match arch {
            Architecture::Improved => g.dense_backbone(),
            Architecture::Reference => g.csp_backbone(),
        };
        g.neck(&p3, &p4, &p5, arch);
        Ok(NetworkSpec {
            input_shape: [self.input_size, self.input_size, 3],
            nodes: g.nodes,
            outputs: HEAD_IDS.iter().map(|s| s.to_string()).collect(),
        })
    }
}

struct Graph<'a> {
    b: &'a YoloBuilder,
    nodes: Vec<Node>,
}

impl Graph<'_> {
    fn push(&mut self, id: &str, layer: LayerSpec, inputs: &[&str]) -> String {
        self.nodes.push(Node::new(id, layer, inputs));
        id.to_string()
    }

    fn conv(&mut self, id: &str, src: &str, c: usize, k: usize, act: ActivationKind) -> String {
        let out_channels = self.b.ch(c);
        self.push(
            id,
            LayerSpec::Conv {
                out_channels,
                kernel: k,
                stride: 1,
                activation: act,
            },
            &[src],
        )
    }

    fn down(&mut self, id: &str, src: &str, c: usize, act: ActivationKind) -> String {
        let out_channels = self.b.ch(c);
        self.push(
            id,
            LayerSpec::Downsample {
                out_channels,
                activation: act,
            },
            &[src],
        )
    }

    fn csp(&mut self, id: &str, src: &str, variant: CspVariant, n: usize, c: usize, act: ActivationKind) -> String {
        let out_channels = self.b.ch(c);
        self.push(
            id,
            LayerSpec::Csp {
                variant,
                n,
                out_channels,
                activation: act,
            },
            &[src],
        )
    }

    /// Stem plus the three stages shared by both backbones; returns the
    /// stride-8 feature map.
    fn common_stem(&mut self) -> String {
        let a = self.b.backbone_activation;
        self.conv("stem", INPUT, 32, 3, a);
        self.down("down1", "stem", 64, a);
        self.csp("csp1", "down1", CspVariant::Csp, 1, 64, a);
        self.down("down2", "csp1", 128, a);
        self.csp("csp2", "down2", CspVariant::Csp, 2, 128, a);
        self.down("down3", "csp2", 256, a);
        self.csp("csp3", "down3", CspVariant::Csp, 8, 256, a)
    }

    fn csp_backbone(&mut self) -> (String, String, String) {
        let a = self.b.backbone_activation;
        let p3 = self.common_stem();
        self.down("down4", &p3, 512, a);
        let p4 = self.csp("csp4", "down4", CspVariant::Csp, 8, 512, a);
        self.down("down5", &p4, 1024, a);
        let p5 = self.csp("csp5", "down5", CspVariant::Csp, 4, 1024, a);
        (p3, p4, p5)
    }

    /// Dense stage 1 grows 256 → 512 channels at stride 16 (growth 64, four
    /// layers); dense stage 2 grows 512 → 1024 at stride 32 (growth 128, four
    /// layers). Each is followed by a CSP1-n block (n = 4, then 2).
    fn dense_backbone(&mut self) -> (String, String, String) {
        let a = self.b.backbone_activation;
        let p3 = self.common_stem();
        self.down("down4", &p3, 256, a);
        let growth = self.b.ch(64);
        self.push(
            DENSE_IDS[0],
            LayerSpec::Dense {
                num_layers: 4,
                growth,
                activation: a,
            },
            &["down4"],
        );
        let p4 = self.csp("csp1_4", DENSE_IDS[0], CspVariant::Csp1, 4, 512, a);
        self.down("down5", &p4, 512, a);
        let growth = self.b.ch(128);
        self.push(
            DENSE_IDS[1],
            LayerSpec::Dense {
                num_layers: 4,
                growth,
                activation: a,
            },
            &["down5"],
        );
        let p5 = self.csp("csp1_2", DENSE_IDS[1], CspVariant::Csp1, 2, 1024, a);
        (p3, p4, p5)
    }

    fn csp2_fuse(&mut self, prefix: &str, src: &str, c: usize) -> String {
        let a = self.b.neck_activation;
        let n = self.b.neck_depth;
        self.csp(prefix, src, CspVariant::Csp2, n, c, a)
    }

    fn five_conv_fuse(&mut self, prefix: &str, src: &str, c: usize) -> String {
        let a = self.b.neck_activation;
        let mut last = src.to_string();
        for (i, (mult, k)) in [(1, 1), (2, 3), (1, 1), (2, 3), (1, 1)].into_iter().enumerate() {
            last = self.conv(&format!("{prefix}_{i}"), &last, c * mult, k, a);
        }
        last
    }

    /// PANet fusion stage: CSP2-n block for the improved network, five
    /// alternating 1×1/3×3 convs for the reference.
    fn fuse(&mut self, arch: Architecture, prefix: &str, src: &str, c: usize) -> String {
        match arch {
            Architecture::Improved => self.csp2_fuse(prefix, src, c),
            Architecture::Reference => self.five_conv_fuse(prefix, src, c),
        }
    }

    fn neck(&mut self, p3: &str, p4: &str, p5: &str, arch: Architecture) {
        let a = self.b.neck_activation;
        // SPP block on the deepest feature map.
        self.conv("spp_in0", p5, 512, 1, a);
        self.conv("spp_in1", "spp_in0", 1024, 3, a);
        self.conv("spp_in2", "spp_in1", 512, 1, a);
        self.push(
            "spp",
            LayerSpec::Spp {
                kernels: SPP_KERNELS.to_vec(),
            },
            &["spp_in2"],
        );
        self.conv("spp_out0", "spp", 512, 1, a);
        self.conv("spp_out1", "spp_out0", 1024, 3, a);
        let top = self.conv("spp_out2", "spp_out1", 512, 1, a);

        // Top-down path.
        self.conv("td5_reduce", &top, 256, 1, a);
        self.push("td5_up", LayerSpec::Upsample2x, &["td5_reduce"]);
        self.conv("td4_lateral", p4, 256, 1, a);
        self.push("td4_cat", LayerSpec::Concat, &["td4_lateral", "td5_up"]);
        let mid = self.fuse(arch, "td4_fuse", "td4_cat", 256);

        self.conv("td4_reduce", &mid, 128, 1, a);
        self.push("td4_up", LayerSpec::Upsample2x, &["td4_reduce"]);
        self.conv("td3_lateral", p3, 128, 1, a);
        self.push("td3_cat", LayerSpec::Concat, &["td3_lateral", "td4_up"]);
        let fine = self.fuse(arch, "td3_fuse", "td3_cat", 128);

        // Bottom-up path.
        self.down("bu3_down", &fine, 256, a);
        self.push("bu4_cat", LayerSpec::Concat, &["bu3_down", &mid]);
        let mid2 = self.fuse(arch, "bu4_fuse", "bu4_cat", 256);
        self.down("bu4_down", &mid2, 512, a);
        self.push("bu5_cat", LayerSpec::Concat, &["bu4_down", &top]);
        let coarse = self.fuse(arch, "bu5_fuse", "bu5_cat", 512);

        let head = LayerSpec::Head {
            num_anchors: self.b.num_anchors,
            num_classes: self.b.num_classes,
        };
        for ((id, src), c) in HEAD_IDS.iter().zip([&fine, &mid2, &coarse]).zip([256, 512, 1024]) {
            let pre = self.conv(&format!("{id}_conv"), src, c, 3, a);
            self.push(id, head.clone(), &[&pre]);
        }
    }
}

/// Improved detector at full width.
pub fn build_improved_yolov4(num_classes: usize, input_size: usize) -> Result<NetworkSpec> {
    YoloBuilder::improved(num_classes, input_size).build(Architecture::Improved)
}

/// CSPDarknet53 + SPP + PANet reference at full width.
pub fn build_reference_yolov4(num_classes: usize, input_size: usize) -> Result<NetworkSpec> {
    YoloBuilder::reference(num_classes, input_size).build(Architecture::Reference)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn head_grids_and_depth_at_416() {
        let spec = build_improved_yolov4(4, 416).unwrap();
        let r = spec.infer_shapes().unwrap();
        assert_eq!(r.head_shapes(), vec![[52, 52, 27], [26, 26, 27], [13, 13, 27]]);
    }

    #[test]
    fn dense_stage_outputs() {
        let r = build_improved_yolov4(4, 416).unwrap().infer_shapes().unwrap();
        assert_eq!(r.node(DENSE_IDS[0]).unwrap().output_shape, [26, 26, 512]);
        assert_eq!(r.node(DENSE_IDS[1]).unwrap().output_shape, [13, 13, 1024]);
        // dense stages feed CSP1-4 and CSP1-2
        let spec = build_improved_yolov4(4, 416).unwrap();
        assert_eq!(spec.node("csp1_4").unwrap().inputs, vec![DENSE_IDS[0]]);
        assert_eq!(spec.node("csp1_2").unwrap().inputs, vec![DENSE_IDS[1]]);
        assert_eq!(r.node("spp").unwrap().output_shape, [13, 13, 2048]);
    }

    #[test]
    fn input_size_rules() {
        assert!(matches!(
            build_improved_yolov4(4, 100),
            Err(NetworkError::InputSize(100))
        ));
        assert!(matches!(build_improved_yolov4(4, 32), Err(NetworkError::InputSize(32))));
        let r = build_improved_yolov4(1, 64).unwrap().infer_shapes().unwrap();
        assert_eq!(r.head_shapes(), vec![[8, 8, 18], [4, 4, 18], [2, 2, 18]]);
    }

    #[test]
    fn narrow_width_keeps_grids() {
        let spec = YoloBuilder::improved(4, 64)
            .with_width(0.125)
            .build(Architecture::Improved)
            .unwrap();
        let r = spec.infer_shapes().unwrap();
        assert_eq!(r.head_shapes(), vec![[8, 8, 27], [4, 4, 27], [2, 2, 27]]);
        assert_eq!(r.node(DENSE_IDS[0]).unwrap().output_shape, [4, 4, 64]);
        assert_eq!(r.node(DENSE_IDS[1]).unwrap().output_shape, [2, 2, 128]);
    }

    #[test]
    fn improved_is_smaller_than_reference() {
        let a = build_improved_yolov4(4, 416).unwrap().count_params().unwrap().1;
        let b = build_reference_yolov4(4, 416).unwrap().count_params().unwrap().1;
        assert!(a < b, "improved {a} vs reference {b}");
    }

    #[test]
    fn every_head_depth_follows_formula() {
        for classes in [1, 4, 20] {
            let r = build_improved_yolov4(classes, 256).unwrap().infer_shapes().unwrap();
            for s in r.head_shapes() {
                assert_eq!(s[2], 3 * (5 + classes));
            }
        }
    }
}
