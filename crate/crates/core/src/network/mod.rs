//! Declarative detector graph: layer vocabulary, DAG validation, shape
//! inference, parameter counting, weight storage and CPU forward inference.

mod builder;
mod config;
mod forward;
mod graph;
mod layer;
mod weights;

use thiserror::Error;

use crate::activations::ActivationError;
use crate::tensor::TensorError;

pub use builder::{
    build_improved_yolov4, build_reference_yolov4, Architecture, YoloBuilder, DENSE_IDS, HEAD_IDS, SPP_KERNELS,
};
pub use config::{NetworkConfig, PresetParams};
pub use forward::{forward, BN_EPS};
pub use graph::{NetworkSpec, Node, NodeReport, ShapeReport, INPUT};
pub use layer::{ConvUnit, CspVariant, LayerSpec, Norm};
pub use weights::{WeightStore, WEIGHTS_MAGIC, WEIGHTS_VERSION};

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("invalid network: {0}")]
    Invalid(String),
    #[error("input size {0} must be a multiple of 32 and at least 64")]
    InputSize(usize),
    #[error("node `{node}` references unknown node `{missing}`")]
    UnknownNode { node: String, missing: String },
    #[error("cycle detected among nodes: {0}")]
    Cycle(String),
    #[error("node `{node}`: `{left}` has shape {left_shape:?} but `{right}` has shape {right_shape:?}")]
    ShapeConflict {
        node: String,
        left: String,
        left_shape: [usize; 3],
        right: String,
        right_shape: [usize; 3],
    },
    #[error("input tensor shape {found:?} does not match network input {expected:?}")]
    InputShape { expected: [usize; 3], found: Vec<usize> },
    #[error("no weights for node `{node}`")]
    MissingWeights { node: String },
    #[error("weights for unknown node `{node}`")]
    UnexpectedWeights { node: String },
    #[error("node `{node}`: expected {expected} tensors, found {found}")]
    TensorCount {
        node: String,
        expected: usize,
        found: usize,
    },
    #[error("node `{node}` tensor {tensor}: expected shape {expected:?}, found {found:?}")]
    WeightShape {
        node: String,
        tensor: usize,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("not a weight file (bad magic bytes)")]
    BadMagic,
    #[error("unsupported weight file version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("weight file truncated: {0}")]
    Truncated(String),
    #[error("malformed weight file: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("node `{node}`: {source}")]
    Tensor { node: String, source: TensorError },
    #[error(transparent)]
    Activation(#[from] ActivationError),
    #[error("config: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, NetworkError>;
