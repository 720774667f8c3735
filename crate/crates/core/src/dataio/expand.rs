use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::augment::{apply_augment, AugmentOp};
use super::image::ImageBuffer;
use super::voc::{parse_voc_xml, write_voc_xml, Annotation};
use super::{DataError, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub image: PathBuf,
    pub annotation: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<String>,
    /// Id of the original item an augmented entry was derived from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    /// Tag of the op that produced this entry.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub op: Option<String>,
}

/// Item id → files. Paths are relative to the manifest's directory unless
/// absolute.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Manifest {
    pub entries: BTreeMap<String, ManifestEntry>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| DataError::Manifest(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(path, text + "\n").map_err(|e| DataError::io(path, e))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Reads one entry's image and annotation, resolving relative paths
    /// against `base`.
    pub fn load_item(&self, id: &str, base: &Path) -> Result<(ImageBuffer, Annotation)> {
        let e = self
            .entries
            .get(id)
            .ok_or_else(|| DataError::Manifest(format!("no entry `{id}`")))?;
        let wrap = |source: DataError| DataError::Item {
            id: id.to_string(),
            source: Box::new(source),
        };
        let img = ImageBuffer::read(&base.join(&e.image)).map_err(wrap)?;
        let ann_path = base.join(&e.annotation);
        let bytes = std::fs::read(&ann_path).map_err(|err| wrap(DataError::io(&ann_path, err)))?;
        let ann = parse_voc_xml(&bytes).map_err(wrap)?;
        Ok((img, ann))
    }
}

/// Destination for expanded items.
pub trait Sink {
    /// Stores one output and returns its image and annotation paths.
    fn write(&mut self, id: &str, img: &ImageBuffer, ann: &Annotation) -> Result<(PathBuf, PathBuf)>;
}

/// Writes `images/<id>.ppm` and `annotations/<id>.xml` under a root
/// directory; returned paths are relative to it.
pub struct DirSink {
    root: PathBuf,
}

impl DirSink {
    pub fn new(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        for sub in ["images", "annotations"] {
            let d = root.join(sub);
            std::fs::create_dir_all(&d).map_err(|e| DataError::io(&d, e))?;
        }
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }
}

impl Sink for DirSink {
    fn write(&mut self, id: &str, img: &ImageBuffer, ann: &Annotation) -> Result<(PathBuf, PathBuf)> {
        let image = PathBuf::from("images").join(format!("{id}.ppm"));
        let annotation = PathBuf::from("annotations").join(format!("{id}.xml"));
        img.write(&self.root.join(&image))?;
        let p = self.root.join(&annotation);
        std::fs::write(&p, write_voc_xml(ann)).map_err(|e| DataError::io(&p, e))?;
        Ok((image, annotation))
    }
}

/// Expansion stopped at a sink failure; `partial` lists what was written.
#[derive(Debug, thiserror::Error)]
#[error("expansion aborted after {} outputs: {error}", partial.len())]
pub struct ExpandFailure {
    pub partial: Manifest,
    pub error: DataError,
}

pub struct SourceItem {
    pub id: String,
    pub split: Option<String>,
}

const CHUNK: usize = 32;

/// Output id, split, image and annotation.
type Output = (String, Option<String>, ImageBuffer, Annotation);

/// Emits each item unchanged plus one variant per op, in input order.
/// Items are transformed in parallel; writes and the manifest order never
/// depend on thread timing.
pub fn expand_dataset(
    items: &[SourceItem],
    load: impl Fn(&str) -> Result<(ImageBuffer, Annotation)> + Sync,
    ops: &[AugmentOp],
    sink: &mut dyn Sink,
) -> std::result::Result<Manifest, ExpandFailure> {
    let fail = |partial: &Manifest, error| ExpandFailure {
        partial: partial.clone(),
        error,
    };
    let mut out = Manifest::default();
    let mut tags = HashSet::new();
    for op in ops {
        op.validate().map_err(|e| fail(&out, e))?;
        if !tags.insert(op.tag()) {
            return Err(fail(
                &out,
                DataError::AugmentParam(format!("duplicate op tag `{}`", op.tag())),
            ));
        }
    }
    for chunk in items.chunks(CHUNK) {
        let produced: Vec<Result<Vec<Output>>> = chunk
            .par_iter()
            .map(|item| {
                let wrap = |source: DataError| match source {
                    e @ DataError::Item { .. } => e,
                    e => DataError::Item {
                        id: item.id.clone(),
                        source: Box::new(e),
                    },
                };
                let (img, ann) = load(&item.id).map_err(wrap)?;
                let mut v = Vec::with_capacity(ops.len() + 1);
                let mut base_ann = ann.clone();
                base_ann.filename = format!("{}.ppm", item.id);
                v.push((item.id.clone(), None, img.clone(), base_ann));
                for op in ops {
                    let (i2, mut a2) = apply_augment(&img, &ann, *op).map_err(wrap)?;
                    let id = format!("{}_{}", item.id, op.tag());
                    a2.filename = format!("{id}.ppm");
                    v.push((id, Some(op.tag()), i2, a2));
                }
                Ok(v)
            })
            .collect();
        for (item, outputs) in chunk.iter().zip(produced) {
            let outputs = outputs.map_err(|e| fail(&out, e))?;
            for (id, op, img, ann) in outputs {
                if out.entries.contains_key(&id) {
                    return Err(fail(&out, DataError::Manifest(format!("duplicate output id `{id}`"))));
                }
                let (image, annotation) = sink.write(&id, &img, &ann).map_err(|e| fail(&out, e))?;
                out.entries.insert(
                    id,
                    ManifestEntry {
                        image,
                        annotation,
                        split: item.split.clone(),
                        source: op.as_ref().map(|_| item.id.clone()),
                        op,
                    },
                );
            }
        }
    }
    Ok(out)
}

/// [`expand_dataset`] over a manifest on disk.
pub fn expand_manifest(
    manifest: &Manifest,
    base: &Path,
    ops: &[AugmentOp],
    sink: &mut dyn Sink,
) -> std::result::Result<Manifest, ExpandFailure> {
    let items: Vec<SourceItem> = manifest
        .entries
        .iter()
        .map(|(id, e)| SourceItem {
            id: id.clone(),
            split: e.split.clone(),
        })
        .collect();
    expand_dataset(&items, |id| manifest.load_item(id, base), ops, sink)
}
