//! PASCAL VOC annotations, PPM images, dataset splitting and the
//! augmentation pipeline used to expand a dataset tenfold.

mod augment;
mod expand;
mod image;
mod split;
mod voc;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use augment::{apply_augment, default_ops, gaussian_kernel, AugmentOp};
pub use expand::{expand_dataset, expand_manifest, DirSink, ExpandFailure, Manifest, ManifestEntry, Sink, SourceItem};
pub use image::ImageBuffer;
pub use split::{split_dataset, Split};
pub use voc::{parse_voc_xml, write_voc_xml, Annotation, PixelBox, VocObject};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("malformed XML: {0}")]
    Xml(String),
    #[error("annotation has no <size> element")]
    MissingSize,
    #[error("<{parent}> is missing <{field}>")]
    MissingField { parent: String, field: String },
    #[error("<{field}>: {value:?} is not an integer")]
    BadNumber { field: String, value: String },
    #[error("invalid image size: {0}")]
    BadSize(String),
    #[error("object {object} ({name}): degenerate box ({x1}, {y1}, {x2}, {y2})")]
    DegenerateBox {
        object: usize,
        name: String,
        x1: i64,
        y1: i64,
        x2: i64,
        y2: i64,
    },
    #[error("object {object} ({name}): box outside the {width}×{height} image")]
    BoxOutOfBounds {
        object: usize,
        name: String,
        width: u32,
        height: u32,
    },
    #[error("{width}×{height} RGB image needs {} bytes, got {len}", *width as usize * *height as usize * 3)]
    ImageSize { width: u32, height: u32, len: usize },
    #[error("image codec: {0}")]
    Image(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("image is {}×{} but annotation says {}×{}", image.0, image.1, annotation.0, annotation.1)]
    DimMismatch { image: (u32, u32), annotation: (u32, u32) },
    #[error("invalid augmentation: {0}")]
    AugmentParam(String),
    #[error("split ratios ({0}, {1}, {2}) must be positive and sum to 1")]
    Ratios(f64, f64, f64),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("item `{id}`: {source}")]
    Item { id: String, source: Box<DataError> },
}

impl DataError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, DataError>;
