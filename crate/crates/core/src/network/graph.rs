use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::layer::{ConvUnit, LayerSpec};
use super::{NetworkError, Result};

/// Reserved id of the image input.
pub const INPUT: &str = "input";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: String,
    pub layer: LayerSpec,
    pub inputs: Vec<String>,
}

impl Node {
    pub fn new(id: impl Into<String>, layer: LayerSpec, inputs: &[&str]) -> Self {
        Self {
            id: id.into(),
            layer,
            inputs: inputs.iter().map(|s| s.to_string()).collect(),
        }
    }
}

/// Detector graph: nodes in any order forming a DAG rooted at [`INPUT`],
/// with exactly three head outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_shape: [usize; 3],
    pub nodes: Vec<Node>,
    pub outputs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodeReport {
    pub id: String,
    pub kind: &'static str,
    pub output_shape: [usize; 3],
    pub params: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShapeReport {
    pub input_shape: [usize; 3],
    /// Nodes in evaluation order.
    pub nodes: Vec<NodeReport>,
    pub total_params: usize,
    pub outputs: Vec<String>,
}

impl ShapeReport {
    pub fn node(&self, id: &str) -> Option<&NodeReport> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn head_shapes(&self) -> Vec<[usize; 3]> {
        self.outputs
            .iter()
            .filter_map(|id| self.node(id).map(|n| n.output_shape))
            .collect()
    }
}

fn conv_out(extent: usize, kernel: usize, stride: usize) -> usize {
    (extent + 2 * (kernel / 2) - kernel) / stride + 1
}

impl NetworkSpec {
    pub fn node(&self, id: &str) -> Option<&Node> {
        self.nodes.iter().find(|n| n.id == id)
    }

    /// Validates the graph and returns node indices in evaluation order.
    /// Ties are resolved by declaration order so the result is stable.
    pub fn topo_order(&self) -> Result<Vec<usize>> {
        let [h, w, c] = self.input_shape;
        if h == 0 || w == 0 || c == 0 {
            return Err(NetworkError::Invalid(format!(
                "input shape {:?} has a zero dimension",
                self.input_shape
            )));
        }
        let mut index: HashMap<&str, usize> = HashMap::new();
        for (i, n) in self.nodes.iter().enumerate() {
            if n.id == INPUT {
                return Err(NetworkError::Invalid(format!("node id `{INPUT}` is reserved")));
            }
            if index.insert(n.id.as_str(), i).is_some() {
                return Err(NetworkError::Invalid(format!("duplicate node id `{}`", n.id)));
            }
        }
        let mut indegree = vec![0usize; self.nodes.len()];
        let mut users: Vec<Vec<usize>> = vec![Vec::new(); self.nodes.len()];
        for (i, n) in self.nodes.iter().enumerate() {
            let arity_ok = match n.layer {
                LayerSpec::Concat => !n.inputs.is_empty(),
                _ => n.inputs.len() == 1,
            };
            if !arity_ok {
                return Err(NetworkError::Invalid(format!(
                    "node `{}` ({}) has {} inputs",
                    n.id,
                    n.layer.kind_name(),
                    n.inputs.len()
                )));
            }
            for src in &n.inputs {
                if src == INPUT {
                    continue;
                }
                let j = *index.get(src.as_str()).ok_or_else(|| NetworkError::UnknownNode {
                    node: n.id.clone(),
                    missing: src.clone(),
                })?;
                indegree[i] += 1;
                users[j].push(i);
            }
        }
        let mut ready: std::collections::BTreeSet<usize> =
            (0..self.nodes.len()).filter(|&i| indegree[i] == 0).collect();
        let mut order = Vec::with_capacity(self.nodes.len());
        while let Some(i) = ready.pop_first() {
            order.push(i);
            for &u in &users[i] {
                indegree[u] -= 1;
                if indegree[u] == 0 {
                    ready.insert(u);
                }
            }
        }
        if order.len() != self.nodes.len() {
            let stuck = (0..self.nodes.len())
                .find(|i| !order.contains(i))
                .map(|i| self.nodes[i].id.clone())
                .unwrap_or_default();
            return Err(NetworkError::Cycle(stuck));
        }

        if self.outputs.len() != 3 {
            return Err(NetworkError::Invalid(format!(
                "expected exactly 3 output heads, got {}",
                self.outputs.len()
            )));
        }
        for o in &self.outputs {
            match self.node(o) {
                Some(Node {
                    layer: LayerSpec::Head { .. },
                    ..
                }) => {}
                Some(_) => return Err(NetworkError::Invalid(format!("output `{o}` is not a head node"))),
                None => {
                    return Err(NetworkError::UnknownNode {
                        node: "outputs".into(),
                        missing: o.clone(),
                    })
                }
            }
        }
        Ok(order)
    }

    /// Output shape and parameter count for every node.
    pub fn infer_shapes(&self) -> Result<ShapeReport> {
        let order = self.topo_order()?;
        let mut shapes: BTreeMap<&str, [usize; 3]> = BTreeMap::new();
        shapes.insert(INPUT, self.input_shape);
        let mut nodes = Vec::with_capacity(order.len());
        for i in order {
            let node = &self.nodes[i];
            let input_shapes: Vec<(&str, [usize; 3])> =
                node.inputs.iter().map(|s| (s.as_str(), shapes[s.as_str()])).collect();
            let out = output_shape(node, &input_shapes)?;
            let cin = input_shapes[0].1[2];
            let params = node.layer.conv_units(cin).iter().map(ConvUnit::trainable_params).sum();
            shapes.insert(node.id.as_str(), out);
            nodes.push(NodeReport {
                id: node.id.clone(),
                kind: node.layer.kind_name(),
                output_shape: out,
                params,
            });
        }
        Ok(ShapeReport {
            input_shape: self.input_shape,
            total_params: nodes.iter().map(|n| n.params).sum(),
            nodes,
            outputs: self.outputs.clone(),
        })
    }

    /// Convolution units of every parameterised node, in evaluation order.
    pub fn conv_plan(&self) -> Result<Vec<(String, Vec<ConvUnit>)>> {
        let report = self.infer_shapes()?;
        let mut shapes: BTreeMap<&str, [usize; 3]> = BTreeMap::new();
        shapes.insert(INPUT, self.input_shape);
        for n in &report.nodes {
            shapes.insert(n.id.as_str(), n.output_shape);
        }
        let mut plan = Vec::new();
        for n in &report.nodes {
            let node = self.node(&n.id).expect("report ids come from the spec");
            let units = node.layer.conv_units(shapes[node.inputs[0].as_str()][2]);
            if !units.is_empty() {
                plan.push((node.id.clone(), units));
            }
        }
        Ok(plan)
    }

    /// Per-node and total trainable parameter counts.
    pub fn count_params(&self) -> Result<(Vec<(String, usize)>, usize)> {
        let r = self.infer_shapes()?;
        Ok((
            r.nodes.iter().map(|n| (n.id.clone(), n.params)).collect(),
            r.total_params,
        ))
    }
}

fn positive(node: &Node, what: &str, v: usize) -> Result<()> {
    if v == 0 {
        Err(NetworkError::Invalid(format!(
            "node `{}`: {what} must be positive",
            node.id
        )))
    } else {
        Ok(())
    }
}

fn output_shape(node: &Node, inputs: &[(&str, [usize; 3])]) -> Result<[usize; 3]> {
    let [h, w, c] = inputs[0].1;
    let conv = |k: usize, s: usize, cout: usize| -> Result<[usize; 3]> {
        positive(node, "kernel", k)?;
        positive(node, "stride", s)?;
        positive(node, "out_channels", cout)?;
        if k.is_multiple_of(2) {
            return Err(NetworkError::Invalid(format!(
                "node `{}`: kernel {k} must be odd",
                node.id
            )));
        }
        Ok([conv_out(h, k, s), conv_out(w, k, s), cout])
    };
    match &node.layer {
        LayerSpec::Conv {
            out_channels,
            kernel,
            stride,
            activation,
        } => {
            activation
                .validate()
                .map_err(|e| NetworkError::Invalid(format!("node `{}`: {e}", node.id)))?;
            conv(*kernel, *stride, *out_channels)
        }
        LayerSpec::Downsample {
            out_channels,
            activation,
        } => {
            activation
                .validate()
                .map_err(|e| NetworkError::Invalid(format!("node `{}`: {e}", node.id)))?;
            conv(3, 2, *out_channels)
        }
        LayerSpec::Csp { n, out_channels, .. } => {
            positive(node, "n", *n)?;
            if *out_channels < 2 || out_channels % 2 != 0 {
                return Err(NetworkError::Invalid(format!(
                    "node `{}`: CSP out_channels {out_channels} must be even",
                    node.id
                )));
            }
            Ok([h, w, *out_channels])
        }
        LayerSpec::Dense { num_layers, growth, .. } => {
            positive(node, "num_layers", *num_layers)?;
            positive(node, "growth", *growth)?;
            Ok([h, w, c + num_layers * growth])
        }
        LayerSpec::Spp { kernels } => {
            for (i, k) in kernels.iter().enumerate() {
                if k % 2 == 0 || kernels[..i].contains(k) {
                    return Err(NetworkError::Invalid(format!(
                        "node `{}`: SPP kernels must be odd and distinct, got {kernels:?}",
                        node.id
                    )));
                }
            }
            Ok([h, w, c * (kernels.len() + 1)])
        }
        LayerSpec::Upsample2x => Ok([2 * h, 2 * w, c]),
        LayerSpec::Concat => {
            let (first_id, first) = inputs[0];
            let mut total = 0;
            for &(id, s) in inputs {
                if s[0] != first[0] || s[1] != first[1] {
                    return Err(NetworkError::ShapeConflict {
                        node: node.id.clone(),
                        left: first_id.to_string(),
                        left_shape: first,
                        right: id.to_string(),
                        right_shape: s,
                    });
                }
                total += s[2];
            }
            Ok([h, w, total])
        }
        LayerSpec::Head {
            num_anchors,
            num_classes,
        } => {
            positive(node, "num_anchors", *num_anchors)?;
            positive(node, "num_classes", *num_classes)?;
            Ok([h, w, LayerSpec::head_depth(*num_anchors, *num_classes)])
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activations::ActivationKind;
    use crate::network::layer::CspVariant;

    const HS: ActivationKind = ActivationKind::HardSwish;

    fn conv(c: usize, k: usize, s: usize) -> LayerSpec {
        LayerSpec::Conv {
            out_channels: c,
            kernel: k,
            stride: s,
            activation: HS,
        }
    }

    fn head() -> LayerSpec {
        LayerSpec::Head {
            num_anchors: 3,
            num_classes: 4,
        }
    }

    fn with_heads(input_shape: [usize; 3], mut nodes: Vec<Node>, last: &str) -> NetworkSpec {
        for i in 0..3 {
            nodes.push(Node::new(format!("h{i}"), head(), &[last]));
        }
        NetworkSpec {
            input_shape,
            nodes,
            outputs: vec!["h0".into(), "h1".into(), "h2".into()],
        }
    }

    #[test]
    fn single_conv_same_padding() {
        let spec = with_heads([416, 416, 3], vec![Node::new("c", conv(32, 3, 1), &[INPUT])], "c");
        let r = spec.infer_shapes().unwrap();
        assert_eq!(r.node("c").unwrap().output_shape, [416, 416, 32]);
        assert_eq!(r.node("c").unwrap().params, 928);
        assert_eq!(r.node("h0").unwrap().output_shape, [416, 416, 27]);
    }

    #[test]
    fn spp_quadruples_channels() {
        let spec = with_heads(
            [13, 13, 512],
            vec![Node::new(
                "spp",
                LayerSpec::Spp {
                    kernels: vec![5, 9, 13],
                },
                &[INPUT],
            )],
            "spp",
        );
        let r = spec.infer_shapes().unwrap();
        assert_eq!(r.node("spp").unwrap().output_shape, [13, 13, 2048]);
        assert_eq!(r.node("spp").unwrap().params, 0);
    }

    #[test]
    fn csp_keeps_configured_channels() {
        for variant in [CspVariant::Csp, CspVariant::Csp1, CspVariant::Csp2] {
            for n in [1, 2, 4] {
                let layer = LayerSpec::Csp {
                    variant,
                    n,
                    out_channels: 96,
                    activation: HS,
                };
                let spec = with_heads([8, 8, 40], vec![Node::new("b", layer, &[INPUT])], "b");
                let r = spec.infer_shapes().unwrap();
                assert_eq!(r.node("b").unwrap().output_shape, [8, 8, 96]);
            }
        }
    }

    #[test]
    fn dense_adds_growth_per_layer() {
        let layer = LayerSpec::Dense {
            num_layers: 4,
            growth: 64,
            activation: HS,
        };
        let spec = with_heads([26, 26, 256], vec![Node::new("d", layer, &[INPUT])], "d");
        assert_eq!(
            spec.infer_shapes().unwrap().node("d").unwrap().output_shape,
            [26, 26, 512]
        );
    }

    #[test]
    fn identity_graph_has_no_params() {
        let spec = with_heads(
            [4, 4, 3],
            vec![
                Node::new("u", LayerSpec::Upsample2x, &[INPUT]),
                Node::new("cat", LayerSpec::Concat, &["u", "u"]),
            ],
            "cat",
        );
        let (per, total) = spec.count_params().unwrap();
        let non_head: usize = per.iter().filter(|(id, _)| !id.starts_with('h')).map(|p| p.1).sum();
        assert_eq!(non_head, 0);
        assert_eq!(total, 3 * (6 * 27 + 27));
    }

    #[test]
    fn concat_conflict_names_both_nodes() {
        let spec = with_heads(
            [8, 8, 3],
            vec![
                Node::new("a", conv(4, 3, 1), &[INPUT]),
                Node::new("b", conv(4, 3, 2), &[INPUT]),
                Node::new("cat", LayerSpec::Concat, &["a", "b"]),
            ],
            "cat",
        );
        let err = spec.infer_shapes().unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("`a`") && msg.contains("`b`"), "{msg}");
    }

    #[test]
    fn cycles_and_unknown_inputs_rejected() {
        let mut spec = with_heads(
            [8, 8, 3],
            vec![
                Node::new("a", conv(4, 3, 1), &["b"]),
                Node::new("b", conv(4, 3, 1), &["a"]),
            ],
            "b",
        );
        assert!(matches!(spec.topo_order(), Err(NetworkError::Cycle(_))));
        spec.nodes[0].inputs = vec!["nope".into()];
        assert!(matches!(spec.topo_order(), Err(NetworkError::UnknownNode { .. })));
    }

    #[test]
    fn order_independent_of_declaration() {
        let spec = with_heads(
            [8, 8, 3],
            vec![
                Node::new("b", conv(4, 3, 1), &["a"]),
                Node::new("a", conv(4, 3, 1), &[INPUT]),
            ],
            "b",
        );
        let r = spec.infer_shapes().unwrap();
        assert_eq!(r.nodes[0].id, "a");
    }

    #[test]
    fn requires_three_heads() {
        let mut spec = with_heads([8, 8, 3], vec![Node::new("a", conv(4, 3, 1), &[INPUT])], "a");
        spec.outputs.pop();
        assert!(spec.topo_order().is_err());
        spec.outputs.push("a".into());
        assert!(spec.topo_order().is_err());
    }
}
