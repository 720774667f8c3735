use std::cmp::Ordering;
use std::collections::BTreeMap;

use rayon::prelude::*;

use super::{GroundTruthSet, MetricsError, Result};
use crate::boxes::iou;
use crate::postprocess::DetectionRecord;

/// A detection after matching.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDetection {
    pub image_id: String,
    /// Position in the caller's detection list.
    pub index: usize,
    pub class_id: usize,
    pub score: f64,
    pub area: f64,
    /// Index of the matched ground truth within its image, if any.
    pub matched: Option<usize>,
}

impl LabeledDetection {
    pub fn is_tp(&self) -> bool {
        self.matched.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ClassMatches {
    /// Detections of this class in descending score order.
    pub detections: Vec<LabeledDetection>,
    pub gt_count: usize,
}

impl ClassMatches {
    pub fn tp(&self) -> usize {
        self.detections.iter().filter(|d| d.is_tp()).count()
    }

    pub fn fp(&self) -> usize {
        self.detections.len() - self.tp()
    }

    pub fn fn_count(&self) -> usize {
        self.gt_count - self.tp()
    }

    pub fn tp_flags(&self) -> Vec<bool> {
        self.detections.iter().map(LabeledDetection::is_tp).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MatchResult {
    /// Every class seen in the ground truth or the detections.
    pub classes: BTreeMap<usize, ClassMatches>,
}

/// Descending score; equal scores fall back to image id, then box corners,
/// so the order never depends on how the input was arranged.
fn rank(a: &DetectionRecord, b: &DetectionRecord) -> Ordering {
    let (da, db) = (&a.detection, &b.detection);
    db.score
        .total_cmp(&da.score)
        .then_with(|| a.image_id.cmp(&b.image_id))
        .then_with(|| {
            da.bbox
                .corners()
                .iter()
                .zip(db.bbox.corners())
                .map(|(x, y)| x.total_cmp(&y))
                .find(|o| o.is_ne())
                .unwrap_or(Ordering::Equal)
        })
        .then(da.class_id.cmp(&db.class_id))
}

/// Greedy matching: walking detections best first, each takes the unmatched
/// same-class ground truth with the highest IoU when that IoU reaches the
/// threshold, and is a false positive otherwise. Images are matched in
/// parallel and merged in a fixed order.
pub fn match_detections(dets: &[DetectionRecord], gts: &GroundTruthSet, iou_threshold: f64) -> Result<MatchResult> {
    let mut by_image: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, d) in dets.iter().enumerate() {
        if !gts.contains_key(&d.image_id) {
            return Err(MetricsError::UnknownImage(d.image_id.clone()));
        }
        by_image.entry(d.image_id.as_str()).or_default().push(i);
    }
    let per_image: Vec<Vec<LabeledDetection>> = by_image
        .into_par_iter()
        .map(|(image, mut idx)| {
            idx.sort_by(|&a, &b| rank(&dets[a], &dets[b]).then(a.cmp(&b)));
            let objects = &gts[image];
            let mut used = vec![false; objects.len()];
            idx.into_iter()
                .map(|i| {
                    let d = &dets[i].detection;
                    let mut best: Option<(usize, f64)> = None;
                    for (g, gt) in objects.iter().enumerate() {
                        if used[g] || gt.class_id != d.class_id {
                            continue;
                        }
                        let o = iou(&d.bbox, &gt.bbox);
                        if best.is_none_or(|(_, b)| o > b) {
                            best = Some((g, o));
                        }
                    }
                    let matched = best.filter(|&(_, o)| o >= iou_threshold).map(|(g, _)| g);
                    if let Some(g) = matched {
                        used[g] = true;
                    }
                    LabeledDetection {
                        image_id: image.to_string(),
                        index: i,
                        class_id: d.class_id,
                        score: d.score,
                        area: d.bbox.area(),
                        matched,
                    }
                })
                .collect()
        })
        .collect();

    let mut result = MatchResult::default();
    for objects in gts.values() {
        for g in objects {
            result.classes.entry(g.class_id).or_default().gt_count += 1;
        }
    }
    for labeled in per_image.into_iter().flatten() {
        result
            .classes
            .entry(labeled.class_id)
            .or_default()
            .detections
            .push(labeled);
    }
    for cm in result.classes.values_mut() {
        cm.detections
            .sort_by(|a, b| rank(&dets[a.index], &dets[b.index]).then(a.index.cmp(&b.index)));
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boxes::BoundingBox;
    use crate::metrics::GroundTruth;
    use crate::postprocess::Detection;

    fn rec(image: &str, x1: f64, x2: f64, class_id: usize, score: f64) -> DetectionRecord {
        DetectionRecord::new(
            image,
            Detection {
                bbox: BoundingBox::from_corners(x1, 0.0, x2, 1.0).unwrap(),
                class_id,
                score,
            },
        )
    }

    fn gt_set(entries: &[(&str, f64, f64, usize)]) -> GroundTruthSet {
        let mut s = GroundTruthSet::new();
        for &(img, x1, x2, c) in entries {
            s.entry(img.to_string()).or_default().push(GroundTruth {
                bbox: BoundingBox::from_corners(x1, 0.0, x2, 1.0).unwrap(),
                class_id: c,
            });
        }
        s
    }

    #[test]
    fn single_match() {
        let gts = gt_set(&[("a", 0.0, 8.0, 0)]);
        let m = match_detections(&[rec("a", 2.0, 10.0, 0, 0.9)], &gts, 0.5).unwrap();
        let c = &m.classes[&0];
        assert_eq!((c.tp(), c.fp(), c.fn_count()), (1, 0, 0));
    }

    #[test]
    fn duplicate_goes_to_higher_score() {
        let gts = gt_set(&[("a", 0.0, 8.0, 0)]);
        let dets = [rec("a", 0.5, 8.5, 0, 0.8), rec("a", 0.0, 8.0, 0, 0.9)];
        let m = match_detections(&dets, &gts, 0.5).unwrap();
        let c = &m.classes[&0];
        assert_eq!((c.tp(), c.fp(), c.fn_count()), (1, 1, 0));
        assert_eq!(c.detections[0].score, 0.9);
        assert!(c.detections[0].is_tp());
    }

    #[test]
    fn no_detections_all_missed() {
        let gts = gt_set(&[("a", 0.0, 1.0, 1), ("a", 2.0, 3.0, 1), ("b", 0.0, 1.0, 1)]);
        let m = match_detections(&[], &gts, 0.5).unwrap();
        assert_eq!(m.classes[&1].fn_count(), 3);
    }

    #[test]
    fn unmatched_gt_preferred_over_taken_one() {
        // the second detection overlaps the taken GT more but still matches
        // the free one above threshold
        let gts = gt_set(&[("a", 0.0, 10.0, 0), ("a", 1.0, 11.0, 0)]);
        let dets = [rec("a", 0.0, 10.0, 0, 0.9), rec("a", 0.2, 10.2, 0, 0.8)];
        let m = match_detections(&dets, &gts, 0.5).unwrap();
        assert_eq!(m.classes[&0].tp(), 2);
    }

    #[test]
    fn unknown_image_is_an_error() {
        let gts = gt_set(&[("a", 0.0, 1.0, 0)]);
        assert_eq!(
            match_detections(&[rec("zzz", 0.0, 1.0, 0, 0.5)], &gts, 0.5),
            Err(MetricsError::UnknownImage("zzz".into()))
        );
    }

    #[test]
    fn class_mismatch_is_fp_and_fn() {
        let gts = gt_set(&[("a", 0.0, 1.0, 0)]);
        let m = match_detections(&[rec("a", 0.0, 1.0, 1, 0.5)], &gts, 0.5).unwrap();
        assert_eq!(m.classes[&0].fn_count(), 1);
        assert_eq!(m.classes[&1].fp(), 1);
    }
}
