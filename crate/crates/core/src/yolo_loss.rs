//! Composite detection loss over an `N×N×B` prediction grid: coordinate
//! error, confidence error and classification error.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::boxes::{box_loss, BoundingBox, BoxError, IouLossKind};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("grid shape mismatch: prediction {pred:?} vs target {target:?} (grid_n, boxes_per_cell)")]
    Shape {
        pred: (usize, usize),
        target: (usize, usize),
    },
    #[error("class count mismatch: prediction {pred} vs target {target}")]
    Classes { pred: usize, target: usize },
    #[error("expected {expected} slots, got {actual}")]
    SlotCount { expected: usize, actual: usize },
    #[error("slot {slot}: {what} = {value} outside [0, 1]")]
    Probability {
        slot: usize,
        what: &'static str,
        value: f64,
    },
    #[error("slot {slot}: class id {class_id} out of range for {classes} classes")]
    ClassId {
        slot: usize,
        class_id: usize,
        classes: usize,
    },
    #[error("slot {slot}: target box must have positive extents")]
    TargetBox { slot: usize },
    #[error("loss weights must be finite and non-negative")]
    Weights,
    #[error("slot {slot}: {source}")]
    Box {
        slot: usize,
        #[source]
        source: BoxError,
    },
}

pub type Result<T> = std::result::Result<T, LossError>;

#[derive(Debug, Clone, PartialEq)]
pub struct PredictedSlot {
    pub bbox: BoundingBox,
    pub confidence: f64,
    pub class_probs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridPrediction {
    grid_n: usize,
    boxes_per_cell: usize,
    num_classes: usize,
    slots: Vec<PredictedSlot>,
}

fn check_unit(slot: usize, what: &'static str, value: f64) -> Result<()> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(LossError::Probability { slot, what, value })
    }
}

impl GridPrediction {
    /// Slots are indexed `(cell_row·N + cell_col)·B + box`.
    pub fn new(grid_n: usize, boxes_per_cell: usize, num_classes: usize, slots: Vec<PredictedSlot>) -> Result<Self> {
        let expected = grid_n * grid_n * boxes_per_cell;
        if slots.len() != expected {
            return Err(LossError::SlotCount {
                expected,
                actual: slots.len(),
            });
        }
        for (i, s) in slots.iter().enumerate() {
            check_unit(i, "confidence", s.confidence)?;
            if s.class_probs.len() != num_classes {
                return Err(LossError::Classes {
                    pred: s.class_probs.len(),
                    target: num_classes,
                });
            }
            for &p in &s.class_probs {
                check_unit(i, "class probability", p)?;
            }
        }
        Ok(Self {
            grid_n,
            boxes_per_cell,
            num_classes,
            slots,
        })
    }

    pub fn slots(&self) -> &[PredictedSlot] {
        &self.slots
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }
}

/// Ground truth for a slot that is responsible for an object.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetObject {
    pub bbox: BoundingBox,
    pub confidence: f64,
    pub class_id: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridTarget {
    grid_n: usize,
    boxes_per_cell: usize,
    num_classes: usize,
    /// `Some` where the responsibility indicator is 1.
    slots: Vec<Option<TargetObject>>,
}

impl GridTarget {
    pub fn new(
        grid_n: usize,
        boxes_per_cell: usize,
        num_classes: usize,
        slots: Vec<Option<TargetObject>>,
    ) -> Result<Self> {
        let expected = grid_n * grid_n * boxes_per_cell;
        if slots.len() != expected {
            return Err(LossError::SlotCount {
                expected,
                actual: slots.len(),
            });
        }
        for (i, t) in slots.iter().enumerate() {
            if let Some(t) = t {
                if !(t.bbox.w > 0.0 && t.bbox.h > 0.0) {
                    return Err(LossError::TargetBox { slot: i });
                }
                check_unit(i, "target confidence", t.confidence)?;
                if t.class_id >= num_classes {
                    return Err(LossError::ClassId {
                        slot: i,
                        class_id: t.class_id,
                        classes: num_classes,
                    });
                }
            }
        }
        Ok(Self {
            grid_n,
            boxes_per_cell,
            num_classes,
            slots,
        })
    }

    pub fn slots(&self) -> &[Option<TargetObject>] {
        &self.slots
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoxTerm {
    SquaredCoord,
    Giou,
    Diou,
    Ciou,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub kappa_cor: f64,
    pub kappa_nb: f64,
    pub box_term: BoxTerm,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            kappa_cor: 5.0,
            kappa_nb: 0.5,
            box_term: BoxTerm::Ciou,
        }
    }
}

impl LossWeights {
    fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if ok(self.kappa_cor) && ok(self.kappa_nb) {
            Ok(())
        } else {
            Err(LossError::Weights)
        }
    }
}

fn check_shapes(pred: &GridPrediction, tgt: &GridTarget) -> Result<()> {
    if (pred.grid_n, pred.boxes_per_cell) != (tgt.grid_n, tgt.boxes_per_cell) {
        return Err(LossError::Shape {
            pred: (pred.grid_n, pred.boxes_per_cell),
            target: (tgt.grid_n, tgt.boxes_per_cell),
        });
    }
    Ok(())
}

fn squared_residual(p: &BoundingBox, t: &BoundingBox) -> f64 {
    (t.cx - p.cx).powi(2) + (t.cy - p.cy).powi(2) + (t.w - p.w).powi(2) + (t.h - p.h).powi(2)
}

pub fn coord_error(pred: &GridPrediction, tgt: &GridTarget, weights: &LossWeights) -> Result<f64> {
    check_shapes(pred, tgt)?;
    weights.validate()?;
    let kind = match weights.box_term {
        BoxTerm::SquaredCoord => None,
        BoxTerm::Giou => Some(IouLossKind::Giou),
        BoxTerm::Diou => Some(IouLossKind::Diou),
        BoxTerm::Ciou => Some(IouLossKind::Ciou),
    };
    let mut sum = 0.0;
    for (i, (p, t)) in pred.slots.iter().zip(&tgt.slots).enumerate() {
        let Some(t) = t else { continue };
        sum += match kind {
            None => squared_residual(&p.bbox, &t.bbox),
            Some(k) => box_loss(k, &p.bbox, &t.bbox).map_err(|source| LossError::Box { slot: i, source })?,
        };
    }
    Ok(weights.kappa_cor * sum)
}

/// Object slots regress towards their target confidence; every other slot is
/// pushed towards zero with weight `kappa_nb`.
pub fn iou_error(pred: &GridPrediction, tgt: &GridTarget, weights: &LossWeights) -> Result<f64> {
    check_shapes(pred, tgt)?;
    weights.validate()?;
    let (mut obj, mut noobj) = (0.0, 0.0);
    for (p, t) in pred.slots.iter().zip(&tgt.slots) {
        match t {
            Some(t) => obj += (t.confidence - p.confidence).powi(2),
            None => noobj += p.confidence.powi(2),
        }
    }
    Ok(obj + weights.kappa_nb * noobj)
}

pub fn class_error(pred: &GridPrediction, tgt: &GridTarget) -> Result<f64> {
    check_shapes(pred, tgt)?;
    if pred.num_classes != tgt.num_classes {
        return Err(LossError::Classes {
            pred: pred.num_classes,
            target: tgt.num_classes,
        });
    }
    let mut sum = 0.0;
    for (p, t) in pred.slots.iter().zip(&tgt.slots) {
        let Some(t) = t else { continue };
        for (c, &q) in p.class_probs.iter().enumerate() {
            let truth = if c == t.class_id { 1.0 } else { 0.0 };
            sum += (truth - q).powi(2);
        }
    }
    Ok(sum)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub coord: f64,
    pub confidence: f64,
    pub class: f64,
}

pub fn total_loss(pred: &GridPrediction, tgt: &GridTarget, weights: &LossWeights) -> Result<LossBreakdown> {
    let coord = coord_error(pred, tgt, weights)?;
    let confidence = iou_error(pred, tgt, weights)?;
    let class = class_error(pred, tgt)?;
    Ok(LossBreakdown {
        total: coord + confidence + class,
        coord,
        confidence,
        class,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn bx(cx: f64, cy: f64, w: f64, h: f64) -> BoundingBox {
        BoundingBox::new(cx, cy, w, h).unwrap()
    }

    fn perfect(n: usize, b: usize, classes: usize) -> (GridPrediction, GridTarget) {
        let mut ps = Vec::new();
        let mut ts = Vec::new();
        for i in 0..n * n * b {
            let obj = i % 3 == 0;
            let tb = bx(i as f64, 1.0, 2.0, 3.0);
            let cls = i % classes;
            ps.push(PredictedSlot {
                bbox: tb,
                confidence: if obj { 1.0 } else { 0.0 },
                class_probs: (0..classes).map(|c| if obj && c == cls { 1.0 } else { 0.0 }).collect(),
            });
            ts.push(obj.then_some(TargetObject {
                bbox: tb,
                confidence: 1.0,
                class_id: cls,
            }));
        }
        (
            GridPrediction::new(n, b, classes, ps).unwrap(),
            GridTarget::new(n, b, classes, ts).unwrap(),
        )
    }

    struct Instance {
        n: usize,
        b: usize,
        classes: usize,
        // flat arrays in slot order for the oracle
        pbox: Vec<[f64; 4]>,
        pconf: Vec<f64>,
        pcls: Vec<Vec<f64>>,
        obj: Vec<bool>,
        tbox: Vec<[f64; 4]>,
        tconf: Vec<f64>,
        tcls: Vec<usize>,
    }

    fn random_instance(rng: &mut ChaCha8Rng) -> Instance {
        let (n, b, classes) = (3, 2, 4);
        let slots = n * n * b;
        let mut inst = Instance {
            n,
            b,
            classes,
            pbox: vec![],
            pconf: vec![],
            pcls: vec![],
            obj: vec![],
            tbox: vec![],
            tconf: vec![],
            tcls: vec![],
        };
        for _ in 0..slots {
            inst.pbox.push([
                rng.gen_range(0.0..3.0),
                rng.gen_range(0.0..3.0),
                rng.gen_range(0.2..2.0),
                rng.gen_range(0.2..2.0),
            ]);
            inst.pconf.push(rng.gen_range(0.0..1.0));
            inst.pcls.push((0..classes).map(|_| rng.gen_range(0.0..1.0)).collect());
            inst.obj.push(rng.gen_bool(0.4));
            inst.tbox.push([
                rng.gen_range(0.0..3.0),
                rng.gen_range(0.0..3.0),
                rng.gen_range(0.2..2.0),
                rng.gen_range(0.2..2.0),
            ]);
            inst.tconf.push(rng.gen_range(0.0..1.0));
            inst.tcls.push(rng.gen_range(0..classes));
        }
        inst
    }

    fn build(inst: &Instance) -> (GridPrediction, GridTarget) {
        let slots = inst.pbox.len();
        let ps = (0..slots)
            .map(|i| {
                let [cx, cy, w, h] = inst.pbox[i];
                PredictedSlot {
                    bbox: bx(cx, cy, w, h),
                    confidence: inst.pconf[i],
                    class_probs: inst.pcls[i].clone(),
                }
            })
            .collect();
        let ts = (0..slots)
            .map(|i| {
                let [cx, cy, w, h] = inst.tbox[i];
                inst.obj[i].then(|| TargetObject {
                    bbox: bx(cx, cy, w, h),
                    confidence: inst.tconf[i],
                    class_id: inst.tcls[i],
                })
            })
            .collect();
        (
            GridPrediction::new(inst.n, inst.b, inst.classes, ps).unwrap(),
            GridTarget::new(inst.n, inst.b, inst.classes, ts).unwrap(),
        )
    }

    /// Flat loops over (cell, box) pairs straight from the written-out sums.
    fn oracle(inst: &Instance, kc: f64, knb: f64) -> (f64, f64, f64) {
        let (mut cor, mut conf_obj, mut conf_noobj, mut cls) = (0.0, 0.0, 0.0, 0.0);
        for i in 0..inst.n * inst.n {
            for j in 0..inst.b {
                let s = i * inst.b + j;
                let d = if inst.obj[s] { 1.0 } else { 0.0 };
                let (p, t) = (inst.pbox[s], inst.tbox[s]);
                cor += d * ((t[0] - p[0]).powi(2) + (t[1] - p[1]).powi(2));
                cor += d * ((t[2] - p[2]).powi(2) + (t[3] - p[3]).powi(2));
                let tc = if inst.obj[s] { inst.tconf[s] } else { 0.0 };
                conf_obj += d * (tc - inst.pconf[s]).powi(2);
                conf_noobj += (1.0 - d) * (tc - inst.pconf[s]).powi(2);
                for c in 0..inst.classes {
                    let truth = if c == inst.tcls[s] { 1.0 } else { 0.0 };
                    cls += d * (truth - inst.pcls[s][c]).powi(2);
                }
            }
        }
        (kc * cor, conf_obj + knb * conf_noobj, cls)
    }

    fn squared() -> LossWeights {
        LossWeights {
            box_term: BoxTerm::SquaredCoord,
            ..LossWeights::default()
        }
    }

    #[test]
    fn perfect_prediction_is_zero() {
        let (p, t) = perfect(3, 2, 4);
        for term in [BoxTerm::SquaredCoord, BoxTerm::Giou, BoxTerm::Diou, BoxTerm::Ciou] {
            let w = LossWeights {
                box_term: term,
                ..LossWeights::default()
            };
            let r = total_loss(&p, &t, &w).unwrap();
            assert_eq!((r.total, r.coord, r.confidence, r.class), (0.0, 0.0, 0.0, 0.0));
        }
    }

    #[test]
    fn single_offset_cell() {
        let p = GridPrediction::new(
            1,
            1,
            1,
            vec![PredictedSlot {
                bbox: bx(1.5, 1.0, 1.0, 1.0),
                confidence: 1.0,
                class_probs: vec![1.0],
            }],
        )
        .unwrap();
        let t = GridTarget::new(
            1,
            1,
            1,
            vec![Some(TargetObject {
                bbox: bx(1.0, 1.0, 1.0, 1.0),
                confidence: 1.0,
                class_id: 0,
            })],
        )
        .unwrap();
        assert_eq!(coord_error(&p, &t, &squared()).unwrap(), 1.25);
    }

    #[test]
    fn empty_cell_confidence() {
        let p = GridPrediction::new(
            1,
            1,
            1,
            vec![PredictedSlot {
                bbox: bx(0.5, 0.5, 1.0, 1.0),
                confidence: 0.4,
                class_probs: vec![0.3],
            }],
        )
        .unwrap();
        let t = GridTarget::new(1, 1, 1, vec![None]).unwrap();
        let v = iou_error(&p, &t, &LossWeights::default()).unwrap();
        assert!((v - 0.08).abs() < 1e-15);
        assert_eq!(class_error(&p, &t).unwrap(), 0.0);
    }

    #[test]
    fn single_class_term() {
        let p = GridPrediction::new(
            1,
            1,
            4,
            vec![PredictedSlot {
                bbox: bx(0.5, 0.5, 1.0, 1.0),
                confidence: 1.0,
                class_probs: vec![0.0, 0.9, 0.0, 0.0],
            }],
        )
        .unwrap();
        let t = GridTarget::new(
            1,
            1,
            4,
            vec![Some(TargetObject {
                bbox: bx(0.5, 0.5, 1.0, 1.0),
                confidence: 1.0,
                class_id: 1,
            })],
        )
        .unwrap();
        assert!((class_error(&p, &t).unwrap() - 0.01).abs() < 1e-15);
    }

    #[test]
    fn random_grids_match_flat_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..50 {
            let inst = random_instance(&mut rng);
            let (p, t) = build(&inst);
            let w = squared();
            let (oc, oi, ocl) = oracle(&inst, w.kappa_cor, w.kappa_nb);
            let r = total_loss(&p, &t, &w).unwrap();
            assert!((r.coord - oc).abs() < 1e-12 * oc.max(1.0));
            assert!((r.confidence - oi).abs() < 1e-12 * oi.max(1.0));
            assert!((r.class - ocl).abs() < 1e-12 * ocl.max(1.0));
            assert!((r.total - (oc + oi + ocl)).abs() < 1e-11);
            assert_eq!(r.total, r.coord + r.confidence + r.class);
        }
    }

    #[test]
    fn doubling_kappa_cor_doubles_only_coord() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let inst = random_instance(&mut rng);
        let (p, t) = build(&inst);
        let w = LossWeights::default();
        let w2 = LossWeights {
            kappa_cor: 2.0 * w.kappa_cor,
            ..w
        };
        let a = total_loss(&p, &t, &w).unwrap();
        let b = total_loss(&p, &t, &w2).unwrap();
        assert_eq!(b.coord, 2.0 * a.coord);
        assert_eq!(b.confidence, a.confidence);
        assert_eq!(b.class, a.class);
    }

    #[test]
    fn permutation_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let inst = random_instance(&mut rng);
        let (p, t) = build(&inst);
        let mut order: Vec<usize> = (0..inst.pbox.len()).collect();
        order.reverse();
        order.rotate_left(5);
        let ps = order.iter().map(|&i| p.slots[i].clone()).collect();
        let ts = order.iter().map(|&i| t.slots[i].clone()).collect();
        let p2 = GridPrediction::new(3, 2, 4, ps).unwrap();
        let t2 = GridTarget::new(3, 2, 4, ts).unwrap();
        for term in [BoxTerm::SquaredCoord, BoxTerm::Ciou] {
            let w = LossWeights {
                box_term: term,
                ..LossWeights::default()
            };
            let a = total_loss(&p, &t, &w).unwrap();
            let b = total_loss(&p2, &t2, &w).unwrap();
            assert!((a.total - b.total).abs() < 1e-12);
        }
    }

    #[test]
    fn ciou_coord_term_zero_iff_identical() {
        let (p, t) = perfect(2, 1, 2);
        let w = LossWeights::default();
        assert_eq!(coord_error(&p, &t, &w).unwrap(), 0.0);
        let mut slots = p.slots.clone();
        slots[0].bbox.w += 1e-6;
        let p2 = GridPrediction::new(2, 1, 2, slots).unwrap();
        assert!(coord_error(&p2, &t, &w).unwrap() > 0.0);
    }

    #[test]
    fn components_non_negative() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..100 {
            let (p, t) = build(&random_instance(&mut rng));
            for term in [BoxTerm::SquaredCoord, BoxTerm::Giou, BoxTerm::Diou, BoxTerm::Ciou] {
                let w = LossWeights {
                    box_term: term,
                    ..LossWeights::default()
                };
                let r = total_loss(&p, &t, &w).unwrap();
                assert!(r.coord >= 0.0 && r.confidence >= 0.0 && r.class >= 0.0);
            }
        }
    }

    #[test]
    fn shape_and_value_errors() {
        let (p, _) = perfect(3, 2, 4);
        let (_, t) = perfect(2, 2, 4);
        assert!(matches!(
            total_loss(&p, &t, &LossWeights::default()),
            Err(LossError::Shape { .. })
        ));
        let (_, t3) = perfect(3, 2, 3);
        assert!(matches!(class_error(&p, &t3), Err(LossError::Classes { .. })));
        assert!(GridPrediction::new(1, 1, 1, vec![]).is_err());
        let bad = PredictedSlot {
            bbox: bx(0.0, 0.0, 1.0, 1.0),
            confidence: 1.5,
            class_probs: vec![0.0],
        };
        assert!(GridPrediction::new(1, 1, 1, vec![bad]).is_err());
    }
}
