use serde::{Deserialize, Serialize};

use super::{GroundTruth, GroundTruthSet};
use crate::boxes::BoundingBox;
use crate::postprocess::{Detection, DetectionRecord};

/// Target confusion counts for one class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub class_id: usize,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_count: usize,
}

const SLOT: f64 = 40.0;
const SIDE: f64 = 20.0;
const SLOTS_PER_ROW: usize = 64;

/// Builds ground truth and detections that evaluate to exactly the given
/// counts: hit objects get a detection on the identical box, missed objects
/// get none, and false positives sit in their own empty slots. Items are
/// dealt round-robin over `images` images on a non-overlapping slot grid.
pub fn synthetic_from_counts(counts: &[ClassCounts], images: usize) -> (GroundTruthSet, Vec<DetectionRecord>) {
    let images = images.max(1);
    let ids: Vec<String> = (0..images).map(|i| format!("synthetic_{i:05}")).collect();
    let mut gts: GroundTruthSet = ids.iter().map(|id| (id.clone(), Vec::new())).collect();
    let mut dets = Vec::new();
    let mut next_slot = vec![0usize; images];
    let mut turn = 0usize;
    let mut place = |next_slot: &mut Vec<usize>| {
        let img = turn % images;
        turn += 1;
        let s = next_slot[img];
        next_slot[img] += 1;
        let x = (s % SLOTS_PER_ROW) as f64 * SLOT;
        let y = (s / SLOTS_PER_ROW) as f64 * SLOT;
        (
            img,
            BoundingBox::from_corners(x, y, x + SIDE, y + SIDE).expect("valid slot box"),
        )
    };
    for c in counts {
        for k in 0..c.tp + c.fn_count + c.fp {
            let (img, bbox) = place(&mut next_slot);
            let id = &ids[img];
            if k < c.tp + c.fn_count {
                gts.get_mut(id).expect("image exists").push(GroundTruth {
                    bbox,
                    class_id: c.class_id,
                });
            }
            if k < c.tp || k >= c.tp + c.fn_count {
                let score = if k < c.tp { 0.9 } else { 0.5 };
                dets.push(DetectionRecord::new(
                    id.clone(),
                    Detection {
                        bbox,
                        class_id: c.class_id,
                        score,
                    },
                ));
            }
        }
    }
    (gts, dets)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{evaluate, MatchConfig};

    #[test]
    fn counts_reproduce() {
        let counts = [
            ClassCounts {
                class_id: 0,
                tp: 7,
                fp: 3,
                fn_count: 2,
            },
            ClassCounts {
                class_id: 1,
                tp: 0,
                fp: 1,
                fn_count: 4,
            },
            ClassCounts {
                class_id: 3,
                tp: 5,
                fp: 0,
                fn_count: 0,
            },
        ];
        let (gts, dets) = synthetic_from_counts(&counts, 4);
        let r = evaluate(&dets, &gts, &MatchConfig::default(), &[], Default::default()).unwrap();
        for c in counts {
            let got = r.classes.iter().find(|x| x.class_id == c.class_id).unwrap();
            assert_eq!(
                (got.counts.tp, got.counts.fp, got.counts.fn_count),
                (c.tp, c.fp, c.fn_count)
            );
        }
    }
}
