//! Framework-free building blocks for a CSP/Dense YOLOv4-style detector:
//! tensor kernels, activations, box losses, the network graph, decoding and
//! NMS, VOC-style evaluation, and the annotation/augmentation pipeline.

pub mod activations;
pub mod boxes;
pub mod config;
pub mod dataio;
pub mod gradcheck;
pub mod metrics;
pub mod network;
pub mod postprocess;
pub mod tensor;
pub mod yolo_loss;

pub use activations::ActivationKind;
pub use boxes::{BoundingBox, IouLossKind};
pub use config::ExperimentConfig;
pub use dataio::{Annotation, AugmentOp, ImageBuffer};
pub use metrics::{EvalReport, GroundTruth, GroundTruthSet, MatchConfig};
pub use network::{NetworkSpec, WeightStore};
pub use postprocess::{AnchorSet, Detection, DetectionRecord};
pub use tensor::Tensor;
