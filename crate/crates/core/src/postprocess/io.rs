//! Line-oriented and JSON detection files.
//!
//! Text lines read `image_id class_id score x1 y1 x2 y2` with pixel corners
//! printed to six decimals. Blank lines and lines starting with `#` are
//! skipped on input.

use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::{Detection, PostprocessError, Result};
use crate::boxes::BoundingBox;

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionRecord {
    pub image_id: String,
    pub detection: Detection,
}

impl DetectionRecord {
    pub fn new(image_id: impl Into<String>, detection: Detection) -> Self {
        Self {
            image_id: image_id.into(),
            detection,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct JsonRecord {
    image_id: String,
    class_id: usize,
    score: f64,
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
}

fn checked(image_id: String, class_id: usize, score: f64, c: [f64; 4]) -> std::result::Result<DetectionRecord, String> {
    if image_id.is_empty() || image_id.chars().any(char::is_whitespace) {
        return Err(format!("image id {image_id:?} must be non-empty without whitespace"));
    }
    if !(0.0..=1.0).contains(&score) {
        return Err(format!("score {score} outside [0, 1]"));
    }
    let bbox = BoundingBox::from_corners(c[0], c[1], c[2], c[3]).map_err(|e| e.to_string())?;
    Ok(DetectionRecord::new(image_id, Detection { bbox, class_id, score }))
}

pub fn to_lines(records: &[DetectionRecord]) -> String {
    let mut s = String::new();
    for r in records {
        let d = &r.detection;
        let [x1, y1, x2, y2] = d.bbox.corners();
        writeln!(
            s,
            "{} {} {:.6} {:.6} {:.6} {:.6} {:.6}",
            r.image_id, d.class_id, d.score, x1, y1, x2, y2
        )
        .expect("writing to a String");
    }
    s
}

pub fn parse_lines(text: &str) -> Result<Vec<DetectionRecord>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |msg: String| PostprocessError::Parse { line: i + 1, msg };
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 7 {
            return Err(err(format!("expected 7 fields, found {}", f.len())));
        }
        let class_id = f[1]
            .parse::<usize>()
            .map_err(|_| err(format!("bad class id {:?}", f[1])))?;
        let mut nums = [0f64; 5];
        for (n, s) in nums.iter_mut().zip(&f[2..]) {
            *n = s
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| err(format!("bad number {s:?}")))?;
        }
        let rec = checked(
            f[0].to_string(),
            class_id,
            nums[0],
            [nums[1], nums[2], nums[3], nums[4]],
        )
        .map_err(err)?;
        out.push(rec);
    }
    Ok(out)
}

pub fn to_json(records: &[DetectionRecord]) -> String {
    let v: Vec<JsonRecord> = records
        .iter()
        .map(|r| {
            let [x1, y1, x2, y2] = r.detection.bbox.corners();
            JsonRecord {
                image_id: r.image_id.clone(),
                class_id: r.detection.class_id,
                score: r.detection.score,
                x1,
                y1,
                x2,
                y2,
            }
        })
        .collect();
    serde_json::to_string_pretty(&v).expect("plain records serialize")
}

pub fn parse_json(text: &str) -> Result<Vec<DetectionRecord>> {
    let v: Vec<JsonRecord> = serde_json::from_str(text)?;
    v.into_iter()
        .enumerate()
        .map(|(i, r)| {
            checked(r.image_id, r.class_id, r.score, [r.x1, r.y1, r.x2, r.y2])
                .map_err(|msg| PostprocessError::Parse { line: i + 1, msg })
        })
        .collect()
}
