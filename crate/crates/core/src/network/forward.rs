use std::collections::BTreeMap;

use super::graph::{NetworkSpec, INPUT};
use super::layer::{ConvUnit, CspVariant, LayerSpec, Norm};
use super::weights::WeightStore;
use super::{NetworkError, Result};
use crate::activations::activate_tensor;
use crate::tensor::{batchnorm_apply, concat_channels, conv2d, maxpool2d, upsample2x, BatchNormParams, Tensor};

pub const BN_EPS: f32 = 1e-5;

/// Runs the graph on one `H×W×3` image and returns the head tensors in
/// output order. Nodes run sequentially in topological order; the kernels
/// parallelise internally without changing any result bit.
pub fn forward(spec: &NetworkSpec, weights: &WeightStore, input: &Tensor) -> Result<Vec<Tensor>> {
    if input.shape() != spec.input_shape.as_slice() {
        return Err(NetworkError::InputShape {
            expected: spec.input_shape,
            found: input.shape().to_vec(),
        });
    }
    weights.validate(spec)?;
    let order = spec.topo_order()?;
    let mut values: BTreeMap<&str, Tensor> = BTreeMap::new();
    values.insert(INPUT, input.clone());
    for i in order {
        let node = &spec.nodes[i];
        let inputs: Vec<&Tensor> = node.inputs.iter().map(|s| &values[s.as_str()]).collect();
        let ws = weights.get(&node.id).unwrap_or(&[]);
        let cin = inputs[0].shape()[2];
        let units = node.layer.conv_units(cin);
        let mut ctx = NodeCtx {
            node: &node.id,
            units: &units,
            tensors: ws,
            next_unit: 0,
            next_tensor: 0,
        };
        let out = eval_layer(&node.layer, &inputs, &mut ctx)?;
        values.insert(node.id.as_str(), out);
    }
    Ok(spec.outputs.iter().map(|o| values[o.as_str()].clone()).collect())
}

struct NodeCtx<'a> {
    node: &'a str,
    units: &'a [ConvUnit],
    tensors: &'a [Tensor],
    next_unit: usize,
    next_tensor: usize,
}

impl NodeCtx<'_> {
    fn tensor_err(&self) -> impl Fn(crate::tensor::TensorError) -> NetworkError + '_ {
        move |source| NetworkError::Tensor {
            node: self.node.to_string(),
            source,
        }
    }

    /// Applies the next convolution unit: conv, then batch norm and the
    /// activation, or a plain bias for the head.
    fn unit(&mut self, x: &Tensor) -> Result<Tensor> {
        let u = self.units[self.next_unit];
        self.next_unit += 1;
        let n_extra = if u.norm == Norm::BatchNorm { 4 } else { 1 };
        let ts = &self.tensors[self.next_tensor..self.next_tensor + 1 + n_extra];
        self.next_tensor += 1 + n_extra;
        let y = conv2d(x, &ts[0], u.stride, u.padding()).map_err(self.tensor_err())?;
        match u.norm {
            Norm::BatchNorm => {
                let bn = BatchNormParams::new(
                    ts[1].data().to_vec(),
                    ts[2].data().to_vec(),
                    ts[3].data().to_vec(),
                    ts[4].data().to_vec(),
                    BN_EPS,
                )
                .map_err(self.tensor_err())?;
                let y = batchnorm_apply(&y, &bn).map_err(self.tensor_err())?;
                Ok(activate_tensor(u.activation, &y)?)
            }
            Norm::Bias => {
                let c = u.out_channels;
                let bias = ts[1].data();
                let data = y.data().iter().enumerate().map(|(i, v)| v + bias[i % c]).collect();
                Tensor::new(y.shape().to_vec(), data).map_err(self.tensor_err())
            }
        }
    }
}

fn eval_layer(layer: &LayerSpec, inputs: &[&Tensor], ctx: &mut NodeCtx) -> Result<Tensor> {
    let x = inputs[0];
    match layer {
        LayerSpec::Conv { .. } | LayerSpec::Downsample { .. } | LayerSpec::Head { .. } => ctx.unit(x),
        LayerSpec::Csp { variant, n, .. } => {
            let mut t = ctx.unit(x)?;
            for _ in 0..*n {
                let y = ctx.unit(&t)?;
                let y = ctx.unit(&y)?;
                t = match variant {
                    CspVariant::Csp2 => y,
                    _ => t.add(&y).map_err(ctx.tensor_err())?,
                };
            }
            let t = ctx.unit(&t)?;
            let s = ctx.unit(x)?;
            let cat = concat_channels(&[&t, &s]).map_err(ctx.tensor_err())?;
            ctx.unit(&cat)
        }
        LayerSpec::Dense { num_layers, .. } => {
            let mut feats = x.clone();
            for _ in 0..*num_layers {
                let y = ctx.unit(&feats)?;
                feats = concat_channels(&[&feats, &y]).map_err(ctx.tensor_err())?;
            }
            Ok(feats)
        }
        LayerSpec::Spp { kernels } => {
            let pooled = kernels
                .iter()
                .map(|&k| maxpool2d(x, k, 1, k / 2))
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(ctx.tensor_err())?;
            let mut all = vec![x];
            all.extend(pooled.iter());
            concat_channels(&all).map_err(ctx.tensor_err())
        }
        LayerSpec::Upsample2x => upsample2x(x).map_err(ctx.tensor_err()),
        LayerSpec::Concat => concat_channels(inputs).map_err(ctx.tensor_err()),
    }
}
