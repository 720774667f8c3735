//! PASCAL VOC annotation files.
//!
//! Coordinates on disk are 1-based inclusive pixel indices. In memory they
//! are 0-based, so a box must satisfy `0 <= x1 < x2 <= width - 1` (and the
//! same for y). Parsing subtracts one from every coordinate and writing adds
//! it back.

use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::{DataError, Result};
use crate::boxes::BoundingBox;

/// Inclusive 0-based pixel corners.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PixelBox {
    pub x1: u32,
    pub y1: u32,
    pub x2: u32,
    pub y2: u32,
}

impl PixelBox {
    pub fn new(x1: u32, y1: u32, x2: u32, y2: u32) -> Self {
        Self { x1, y1, x2, y2 }
    }

    /// `(x2 − x1)·(y2 − y1)`; invariant under the geometric augmentations.
    pub fn area(&self) -> u64 {
        (self.x2 - self.x1) as u64 * (self.y2 - self.y1) as u64
    }

    pub fn to_bbox(&self) -> BoundingBox {
        BoundingBox::from_corners(self.x1 as f64, self.y1 as f64, self.x2 as f64, self.y2 as f64)
            .expect("ordered integer corners")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocObject {
    pub name: String,
    pub bbox: PixelBox,
    pub difficult: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    pub filename: String,
    pub width: u32,
    pub height: u32,
    pub depth: u32,
    pub objects: Vec<VocObject>,
}

impl Annotation {
    /// Checks sizes and that every box is ordered and inside the image.
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 || self.depth == 0 {
            return Err(DataError::BadSize(format!(
                "{}×{}×{} must be positive",
                self.width, self.height, self.depth
            )));
        }
        for (i, o) in self.objects.iter().enumerate() {
            let b = o.bbox;
            if b.x1 >= b.x2 || b.y1 >= b.y2 {
                return Err(DataError::DegenerateBox {
                    object: i,
                    name: o.name.clone(),
                    x1: b.x1 as i64,
                    y1: b.y1 as i64,
                    x2: b.x2 as i64,
                    y2: b.y2 as i64,
                });
            }
            if b.x2 >= self.width || b.y2 >= self.height {
                return Err(DataError::BoxOutOfBounds {
                    object: i,
                    name: o.name.clone(),
                    width: self.width,
                    height: self.height,
                });
            }
        }
        Ok(())
    }
}

fn child<'a, 'i>(node: roxmltree::Node<'a, 'i>, tag: &str) -> Option<roxmltree::Node<'a, 'i>> {
    node.children().find(|c| c.has_tag_name(tag))
}

fn text_of(node: roxmltree::Node, tag: &str) -> Option<String> {
    child(node, tag).map(|c| c.text().unwrap_or("").trim().to_string())
}

fn number(node: roxmltree::Node, parent: &str, tag: &str) -> Result<i64> {
    let s = text_of(node, tag).ok_or_else(|| DataError::MissingField {
        parent: parent.to_string(),
        field: tag.to_string(),
    })?;
    // some tools write "12.0"; accept integral decimals only
    s.parse::<i64>()
        .ok()
        .or_else(|| {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.fract() == 0.0 && v.abs() < 1e12)
                .map(|v| v as i64)
        })
        .ok_or_else(|| DataError::BadNumber {
            field: format!("{parent}/{tag}"),
            value: s,
        })
}

pub fn parse_voc_xml(bytes: &[u8]) -> Result<Annotation> {
    let text = std::str::from_utf8(bytes).map_err(|e| DataError::Xml(e.to_string()))?;
    let doc = roxmltree::Document::parse(text).map_err(|e| DataError::Xml(e.to_string()))?;
    let root = doc.root_element();
    if !root.has_tag_name("annotation") {
        return Err(DataError::Xml(format!(
            "root element is <{}>, expected <annotation>",
            root.tag_name().name()
        )));
    }
    let filename = text_of(root, "filename").unwrap_or_default();
    let size = child(root, "size").ok_or(DataError::MissingSize)?;
    let dim = |tag: &str| -> Result<u32> {
        let v = number(size, "size", tag)?;
        u32::try_from(v)
            .ok()
            .filter(|&v| v > 0)
            .ok_or_else(|| DataError::BadSize(format!("{tag} = {v}")))
    };
    let width = dim("width")?;
    let height = dim("height")?;
    let depth = if child(size, "depth").is_some() {
        dim("depth")?
    } else {
        3
    };

    let mut objects = Vec::new();
    for (i, obj) in root.children().filter(|c| c.has_tag_name("object")).enumerate() {
        let name = text_of(obj, "name").ok_or_else(|| DataError::MissingField {
            parent: format!("object[{i}]"),
            field: "name".into(),
        })?;
        let bnd = child(obj, "bndbox").ok_or_else(|| DataError::MissingField {
            parent: format!("object[{i}]"),
            field: "bndbox".into(),
        })?;
        let parent = format!("object[{i}]/bndbox");
        let [x1, y1, x2, y2] = [
            number(bnd, &parent, "xmin")?,
            number(bnd, &parent, "ymin")?,
            number(bnd, &parent, "xmax")?,
            number(bnd, &parent, "ymax")?,
        ];
        if x1 >= x2 || y1 >= y2 {
            return Err(DataError::DegenerateBox {
                object: i,
                name,
                x1,
                y1,
                x2,
                y2,
            });
        }
        if x1 < 1 || y1 < 1 || x2 > width as i64 || y2 > height as i64 {
            return Err(DataError::BoxOutOfBounds {
                object: i,
                name,
                width,
                height,
            });
        }
        let difficult = match text_of(obj, "difficult").as_deref() {
            None => None,
            Some("1") | Some("true") => Some(true),
            Some("0") | Some("false") => Some(false),
            Some(other) => {
                return Err(DataError::BadNumber {
                    field: format!("object[{i}]/difficult"),
                    value: other.to_string(),
                })
            }
        };
        let c = |v: i64| (v - 1) as u32;
        objects.push(VocObject {
            name,
            bbox: PixelBox::new(c(x1), c(y1), c(x2), c(y2)),
            difficult,
        });
    }
    Ok(Annotation {
        filename,
        width,
        height,
        depth,
        objects,
    })
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

pub fn write_voc_xml(ann: &Annotation) -> Vec<u8> {
    let mut s = String::from("<annotation>\n");
    let _ = writeln!(s, "\t<filename>{}</filename>", escape(&ann.filename));
    let _ = writeln!(
        s,
        "\t<size>\n\t\t<width>{}</width>\n\t\t<height>{}</height>\n\t\t<depth>{}</depth>\n\t</size>",
        ann.width, ann.height, ann.depth
    );
    for o in &ann.objects {
        s.push_str("\t<object>\n");
        let _ = writeln!(s, "\t\t<name>{}</name>", escape(&o.name));
        if let Some(d) = o.difficult {
            let _ = writeln!(s, "\t\t<difficult>{}</difficult>", d as u8);
        }
        let b = o.bbox;
        let _ = writeln!(
            s,
            "\t\t<bndbox>\n\t\t\t<xmin>{}</xmin>\n\t\t\t<ymin>{}</ymin>\n\t\t\t<xmax>{}</xmax>\n\t\t\t<ymax>{}</ymax>\n\t\t</bndbox>",
            b.x1 + 1,
            b.y1 + 1,
            b.x2 + 1,
            b.y2 + 1
        );
        s.push_str("\t</object>\n");
    }
    s.push_str("</annotation>\n");
    s.into_bytes()
}
