use serde::{Deserialize, Serialize};

use crate::activations::ActivationKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CspVariant {
    /// Original CSPDarknet stage: residual trunk closed by a 1×1 conv.
    Csp,
    /// Residual trunk closed by a 3×3 conv.
    Csp1,
    /// Like `Csp1` with plain (non-residual) conv pairs.
    Csp2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    /// Conv (same padding) + batch norm + activation.
    Conv {
        out_channels: usize,
        kernel: usize,
        stride: usize,
        activation: ActivationKind,
    },
    /// 3×3 stride-2 conv block.
    Downsample {
        out_channels: usize,
        activation: ActivationKind,
    },
    Csp {
        variant: CspVariant,
        n: usize,
        out_channels: usize,
        activation: ActivationKind,
    },
    /// Each layer sees the concatenation of the block input and every earlier
    /// layer's output, and contributes `growth` channels.
    Dense {
        num_layers: usize,
        growth: usize,
        activation: ActivationKind,
    },
    /// Stride-1 max-pools, concatenated after the identity branch.
    Spp {
        kernels: Vec<usize>,
    },
    Upsample2x,
    Concat,
    /// 1×1 conv with bias and no activation.
    Head {
        num_anchors: usize,
        num_classes: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Norm {
    BatchNorm,
    Bias,
}

/// One primitive convolution inside a layer, in weight-file order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvUnit {
    pub kernel: usize,
    pub stride: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub activation: ActivationKind,
    pub norm: Norm,
}

impl ConvUnit {
    fn bn(kernel: usize, stride: usize, cin: usize, cout: usize, act: ActivationKind) -> Self {
        Self {
            kernel,
            stride,
            in_channels: cin,
            out_channels: cout,
            activation: act,
            norm: Norm::BatchNorm,
        }
    }

    pub fn padding(&self) -> usize {
        self.kernel / 2
    }

    /// Kernel weights plus the trainable affine pair (gamma/beta or bias).
    pub fn trainable_params(&self) -> usize {
        let k = self.kernel * self.kernel * self.in_channels * self.out_channels;
        match self.norm {
            Norm::BatchNorm => k + 2 * self.out_channels,
            Norm::Bias => k + self.out_channels,
        }
    }

    /// Shapes of the stored tensors: kernel, then gamma/beta/mean/var or bias.
    pub fn tensor_shapes(&self) -> Vec<Vec<usize>> {
        let mut v = vec![vec![self.kernel, self.kernel, self.in_channels, self.out_channels]];
        let n = match self.norm {
            Norm::BatchNorm => 4,
            Norm::Bias => 1,
        };
        v.extend(std::iter::repeat_n(vec![self.out_channels], n));
        v
    }
}

impl LayerSpec {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Self::Conv { .. } => "conv",
            Self::Downsample { .. } => "downsample",
            Self::Csp {
                variant: CspVariant::Csp,
                ..
            } => "csp",
            Self::Csp {
                variant: CspVariant::Csp1,
                ..
            } => "csp1",
            Self::Csp {
                variant: CspVariant::Csp2,
                ..
            } => "csp2",
            Self::Dense { .. } => "dense",
            Self::Spp { .. } => "spp",
            Self::Upsample2x => "upsample2x",
            Self::Concat => "concat",
            Self::Head { .. } => "head",
        }
    }

    pub fn head_depth(num_anchors: usize, num_classes: usize) -> usize {
        num_anchors * (5 + num_classes)
    }

    /// Primitive convolutions for this layer given its input channel count.
    pub fn conv_units(&self, cin: usize) -> Vec<ConvUnit> {
        match *self {
            Self::Conv {
                out_channels,
                kernel,
                stride,
                activation,
            } => vec![ConvUnit::bn(kernel, stride, cin, out_channels, activation)],
            Self::Downsample {
                out_channels,
                activation,
            } => vec![ConvUnit::bn(3, 2, cin, out_channels, activation)],
            Self::Csp {
                variant,
                n,
                out_channels,
                activation: a,
            } => {
                let hidden = out_channels / 2;
                let closing = if variant == CspVariant::Csp { 1 } else { 3 };
                let mut v = vec![ConvUnit::bn(1, 1, cin, hidden, a)];
                for _ in 0..n {
                    v.push(ConvUnit::bn(1, 1, hidden, hidden, a));
                    v.push(ConvUnit::bn(3, 1, hidden, hidden, a));
                }
                v.push(ConvUnit::bn(closing, 1, hidden, hidden, a));
                v.push(ConvUnit::bn(1, 1, cin, hidden, a));
                v.push(ConvUnit::bn(1, 1, 2 * hidden, out_channels, a));
                v
            }
            Self::Dense {
                num_layers,
                growth,
                activation,
            } => (0..num_layers)
                .map(|i| ConvUnit::bn(3, 1, cin + i * growth, growth, activation))
                .collect(),
            Self::Head {
                num_anchors,
                num_classes,
            } => vec![ConvUnit {
                kernel: 1,
                stride: 1,
                in_channels: cin,
                out_channels: Self::head_depth(num_anchors, num_classes),
                activation: ActivationKind::Linear,
                norm: Norm::Bias,
            }],
            Self::Spp { .. } | Self::Upsample2x | Self::Concat => Vec::new(),
        }
    }
}
