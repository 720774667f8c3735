//! Head tensors to final detections: grid decoding, confidence filtering and
//! greedy per-class non-maximum suppression.

mod io;

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::activations::sigmoid;
use crate::boxes::{decode_box, iou, BoundingBox, BoxError, DecodeContext};
use crate::tensor::Tensor;

pub use io::{parse_json, parse_lines, to_json, to_lines, DetectionRecord};

#[derive(Debug, Error)]
pub enum PostprocessError {
    #[error("head depth {depth} is not {anchors}·(5 + C) for any class count C ≥ 1")]
    Depth { depth: usize, anchors: usize },
    #[error("head must be a square H×W×D tensor, got {0:?}")]
    HeadShape(Vec<usize>),
    #[error("expected {expected} heads, got {found}")]
    HeadCount { expected: usize, found: usize },
    #[error("input size {input} is not a multiple of grid size {grid}")]
    Stride { input: usize, grid: usize },
    #[error("cell ({x}, {y}) anchor {anchor}: {source}")]
    Decode {
        x: usize,
        y: usize,
        anchor: usize,
        source: BoxError,
    },
    #[error("invalid anchors: {0}")]
    Anchors(String),
    #[error("threshold {0} outside its valid range")]
    Threshold(f64),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("detections JSON: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, PostprocessError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    /// Pixel units.
    pub bbox: BoundingBox,
    pub class_id: usize,
    pub score: f64,
}

/// Anchor sizes `(p_w, p_h)` in pixels, one list per head, finest grid first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorSet {
    pub scales: Vec<Vec<(f64, f64)>>,
}

impl Default for AnchorSet {
    /// The nine YOLOv3/v4 anchors for 416-pixel inputs.
    fn default() -> Self {
        Self {
            scales: vec![
                vec![(10.0, 13.0), (16.0, 30.0), (33.0, 23.0)],
                vec![(30.0, 61.0), (62.0, 45.0), (59.0, 119.0)],
                vec![(116.0, 90.0), (156.0, 198.0), (373.0, 326.0)],
            ],
        }
    }
}

impl AnchorSet {
    pub fn new(scales: Vec<Vec<(f64, f64)>>) -> Result<Self> {
        let s = Self { scales };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.scales.len() != 3 {
            return Err(PostprocessError::Anchors(format!(
                "need 3 scales, got {}",
                self.scales.len()
            )));
        }
        let n = self.scales[0].len();
        if n == 0 || self.scales.iter().any(|s| s.len() != n) {
            return Err(PostprocessError::Anchors(
                "every scale needs the same non-zero anchor count".into(),
            ));
        }
        if let Some(&(w, h)) = self
            .scales
            .iter()
            .flatten()
            .find(|(w, h)| !(*w > 0.0 && *h > 0.0 && w.is_finite() && h.is_finite()))
        {
            return Err(PostprocessError::Anchors(format!("anchor ({w}, {h}) must be positive")));
        }
        Ok(())
    }

    pub fn num_anchors(&self) -> usize {
        self.scales.first().map_or(0, Vec::len)
    }
}

/// One candidate per (cell, anchor), in row-major cell order then anchor
/// order. Per-anchor channels are `t_x, t_y, t_w, t_h, objectness,
/// class logits…`; classes use independent sigmoids.
pub fn decode_head(head: &Tensor, anchors: &[(f64, f64)], stride: f64) -> Result<Vec<Detection>> {
    let (n, w, depth) = match *head.shape() {
        [h, w, d] if h == w => (h, w, d),
        _ => return Err(PostprocessError::HeadShape(head.shape().to_vec())),
    };
    let b = anchors.len();
    if b == 0 || depth % b != 0 || depth / b < 6 {
        return Err(PostprocessError::Depth { depth, anchors: b });
    }
    let per = depth / b;
    let data = head.data();
    let mut out = Vec::with_capacity(n * w * b);
    for y in 0..n {
        for x in 0..w {
            let cell = &data[(y * w + x) * depth..(y * w + x + 1) * depth];
            for (a, &(pw, ph)) in anchors.iter().enumerate() {
                let v = &cell[a * per..(a + 1) * per];
                let err = |source| PostprocessError::Decode {
                    x,
                    y,
                    anchor: a,
                    source,
                };
                let ctx = DecodeContext::new((x, y), (pw / stride, ph / stride), n, stride).map_err(err)?;
                let grid_box = decode_box([v[0] as f64, v[1] as f64, v[2] as f64, v[3] as f64], &ctx).map_err(err)?;
                let (class_id, best) = v[5..].iter().map(|&l| sigmoid(l as f64)).enumerate().fold(
                    (0, f64::NEG_INFINITY),
                    |acc, (i, p)| if p > acc.1 { (i, p) } else { acc },
                );
                out.push(Detection {
                    bbox: grid_box.scaled(stride),
                    class_id,
                    score: sigmoid(v[4] as f64) * best,
                });
            }
        }
    }
    Ok(out)
}

/// Decodes all three heads of a square `input_size` image.
pub fn decode_heads(heads: &[Tensor], anchors: &AnchorSet, input_size: usize) -> Result<Vec<Detection>> {
    anchors.validate()?;
    if heads.len() != anchors.scales.len() {
        return Err(PostprocessError::HeadCount {
            expected: anchors.scales.len(),
            found: heads.len(),
        });
    }
    let mut out = Vec::new();
    for (head, scale) in heads.iter().zip(&anchors.scales) {
        let grid = head.shape().first().copied().unwrap_or(0);
        if grid == 0 || !input_size.is_multiple_of(grid) {
            return Err(PostprocessError::Stride {
                input: input_size,
                grid,
            });
        }
        out.extend(decode_head(head, scale, (input_size / grid) as f64)?);
    }
    Ok(out)
}

/// Descending score, then ascending class. Equal keys keep input order.
fn rank(a: &Detection, b: &Detection) -> Ordering {
    b.score
        .partial_cmp(&a.score)
        .unwrap_or(Ordering::Equal)
        .then(a.class_id.cmp(&b.class_id))
}

/// Keeps candidates scoring at least `threshold`, best first.
pub fn filter_confidence(cands: &[Detection], threshold: f64) -> Result<Vec<Detection>> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(PostprocessError::Threshold(threshold));
    }
    let mut kept: Vec<Detection> = cands.iter().filter(|d| d.score >= threshold).copied().collect();
    kept.sort_by(rank);
    Ok(kept)
}

/// Greedy per-class suppression: walking detections best first, a box
/// survives unless a surviving box of its class overlaps it with IoU above
/// `iou_threshold`.
pub fn nms(dets: &[Detection], iou_threshold: f64) -> Result<Vec<Detection>> {
    if !(iou_threshold > 0.0 && iou_threshold <= 1.0) {
        return Err(PostprocessError::Threshold(iou_threshold));
    }
    let mut sorted = dets.to_vec();
    sorted.sort_by(rank);
    let mut kept: Vec<Detection> = Vec::with_capacity(sorted.len());
    for d in sorted {
        let suppressed = kept
            .iter()
            .any(|k| k.class_id == d.class_id && iou(&k.bbox, &d.bbox) > iou_threshold);
        if !suppressed {
            kept.push(d);
        }
    }
    Ok(kept)
}
