use std::collections::BTreeMap;
use std::fmt::Write;

use serde::Serialize;

use super::matching::{match_detections, MatchResult};
use super::{
    average_precision, f1, mean_ap, pr_curve, precision_recall, GroundTruthSet, MatchConfig, PrPoint, Result,
    SizeBucket,
};
use crate::postprocess::DetectionRecord;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CountsReport {
    pub gt: usize,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_count: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl CountsReport {
    pub fn from_counts(tp: usize, fp: usize, fn_count: usize) -> Self {
        let (precision, recall) = precision_recall(tp, fp, fn_count);
        Self {
            gt: tp + fn_count,
            tp,
            fp,
            fn_count,
            precision,
            recall,
            f1: f1(precision, recall),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassReport {
    pub class_id: usize,
    pub name: String,
    #[serde(flatten)]
    pub counts: CountsReport,
    /// Absent for classes with no ground truth.
    pub ap: Option<f64>,
}

/// Mean AP at IoU 0.50, 0.55, …, 0.95.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ApRange {
    pub thresholds: Vec<f64>,
    pub map_per_threshold: Vec<Option<f64>>,
    pub ap50: Option<f64>,
    pub ap75: Option<f64>,
    pub ap50_95: Option<f64>,
}

/// Mean AP per object-size bucket; absent when a bucket has no ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SizeAp {
    pub small: Option<f64>,
    pub medium: Option<f64>,
    pub large: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub iou_threshold: f64,
    pub images: usize,
    pub detections: usize,
    pub classes: Vec<ClassReport>,
    pub overall: CountsReport,
    pub map: Option<f64>,
    /// Classes left out of `map` because they have no ground truth.
    pub map_excluded_classes: Vec<usize>,
    /// Present when requested through [`EvalOptions::range`].
    pub ap_range: Option<ApRange>,
    /// Present when requested through [`EvalOptions::sizes`].
    pub ap_by_size: Option<SizeAp>,
    #[serde(skip)]
    pub curves: BTreeMap<usize, Vec<(f64, PrPoint)>>,
}

fn class_aps(m: &MatchResult) -> Vec<(usize, Option<f64>)> {
    m.classes
        .iter()
        .map(|(&c, cm)| {
            let ap = (cm.gt_count > 0).then(|| average_precision(&pr_curve(&cm.tp_flags(), cm.gt_count)));
            (c, ap)
        })
        .collect()
}

fn map_of(aps: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = aps.flatten().collect();
    mean_ap(&v).ok()
}

pub fn ap_range(dets: &[DetectionRecord], gts: &GroundTruthSet) -> Result<ApRange> {
    // thresholds built from integers so 0.6 is exactly the literal 0.6
    let thresholds: Vec<f64> = (0..10).map(|k| (50 + 5 * k) as f64 / 100.0).collect();
    let map_per_threshold = thresholds
        .iter()
        .map(|&t| {
            Ok(map_of(
                class_aps(&match_detections(dets, gts, t)?).into_iter().map(|x| x.1),
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let ap50_95 = map_per_threshold
        .iter()
        .copied()
        .collect::<Option<Vec<f64>>>()
        .map(|v| v.iter().sum::<f64>() / v.len() as f64);
    Ok(ApRange {
        ap50: map_per_threshold[0],
        ap75: map_per_threshold[5],
        ap50_95,
        thresholds,
        map_per_threshold,
    })
}

/// Size buckets follow the ground truth: a match counts toward its ground
/// truth's bucket, and an unmatched detection toward the bucket of its own
/// area. Matches against out-of-bucket ground truth are dropped.
pub fn ap_by_size(dets: &[DetectionRecord], gts: &GroundTruthSet, cfg: &MatchConfig) -> Result<SizeAp> {
    cfg.validate()?;
    let m = match_detections(dets, gts, cfg.iou_threshold)?;
    Ok(size_ap(&m, gts, cfg))
}

fn size_ap(m: &MatchResult, gts: &GroundTruthSet, cfg: &MatchConfig) -> SizeAp {
    let bucket_map = |b: SizeBucket| {
        let aps = m.classes.iter().map(|(&c, cm)| {
            let gt_count = gts
                .values()
                .flatten()
                .filter(|g| g.class_id == c && cfg.bucket(g.bbox.area()) == b)
                .count();
            if gt_count == 0 {
                return None;
            }
            let flags: Vec<bool> = cm
                .detections
                .iter()
                .filter_map(|d| {
                    let area = match d.matched {
                        Some(g) => gts[&d.image_id][g].bbox.area(),
                        None => d.area,
                    };
                    (cfg.bucket(area) == b).then_some(d.is_tp())
                })
                .collect();
            Some(average_precision(&pr_curve(&flags, gt_count)))
        });
        map_of(aps)
    };
    SizeAp {
        small: bucket_map(SizeBucket::Small),
        medium: bucket_map(SizeBucket::Medium),
        large: bucket_map(SizeBucket::Large),
    }
}

/// Optional, costlier report sections.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EvalOptions {
    /// AP over IoU 0.50:0.05:0.95 (ten extra matching passes).
    pub range: bool,
    /// AP per object-size bucket.
    pub sizes: bool,
}

impl EvalOptions {
    pub fn all() -> Self {
        Self {
            range: true,
            sizes: true,
        }
    }
}

/// Evaluation at `cfg.iou_threshold`. Class names index by class id;
/// missing names fall back to `class_<id>`.
pub fn evaluate(
    dets: &[DetectionRecord],
    gts: &GroundTruthSet,
    cfg: &MatchConfig,
    names: &[String],
    opts: EvalOptions,
) -> Result<EvalReport> {
    cfg.validate()?;
    let m = match_detections(dets, gts, cfg.iou_threshold)?;
    let aps: BTreeMap<usize, Option<f64>> = class_aps(&m).into_iter().collect();
    let mut classes = Vec::new();
    let mut curves = BTreeMap::new();
    let (mut tp, mut fp, mut fn_count) = (0, 0, 0);
    for (&c, cm) in &m.classes {
        tp += cm.tp();
        fp += cm.fp();
        fn_count += cm.fn_count();
        classes.push(ClassReport {
            class_id: c,
            name: names.get(c).cloned().unwrap_or_else(|| format!("class_{c}")),
            counts: CountsReport::from_counts(cm.tp(), cm.fp(), cm.fn_count()),
            ap: aps[&c],
        });
        let curve = pr_curve(&cm.tp_flags(), cm.gt_count);
        curves.insert(c, cm.detections.iter().map(|d| d.score).zip(curve).collect());
    }
    Ok(EvalReport {
        iou_threshold: cfg.iou_threshold,
        images: gts.len(),
        detections: dets.len(),
        overall: CountsReport::from_counts(tp, fp, fn_count),
        map: map_of(aps.values().copied()),
        map_excluded_classes: aps.iter().filter(|(_, a)| a.is_none()).map(|(&c, _)| c).collect(),
        ap_range: if opts.range { Some(ap_range(dets, gts)?) } else { None },
        ap_by_size: opts.sizes.then(|| size_ap(&m, gts, cfg)),
        classes,
        curves,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"))
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Fixed-width table for terminals.
    pub fn to_text(&self) -> String {
        let width = self.classes.iter().map(|c| c.name.len()).chain([5]).max().unwrap_or(5);
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<width$} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7}",
            "class", "GT", "TP", "FP", "FN", "P", "R", "F1", "AP"
        );
        let row = |s: &mut String, name: &str, c: &CountsReport, ap: Option<f64>| {
            let _ = writeln!(
                s,
                "{:<width$} {:>7} {:>7} {:>7} {:>7} {:>7.4} {:>7.4} {:>7.4} {:>7}",
                name,
                c.gt,
                c.tp,
                c.fp,
                c.fn_count,
                c.precision,
                c.recall,
                c.f1,
                opt(ap)
            );
        };
        for c in &self.classes {
            row(&mut s, &c.name, &c.counts, c.ap);
        }
        row(&mut s, "all", &self.overall, self.map);
        let _ = writeln!(s, "\nmAP@{:.2} {}", self.iou_threshold, opt(self.map));
        if let Some(r) = &self.ap_range {
            let _ = writeln!(
                s,
                "AP50 {}   AP75 {}   AP50:95 {}",
                opt(r.ap50),
                opt(r.ap75),
                opt(r.ap50_95)
            );
        }
        if let Some(b) = &self.ap_by_size {
            let _ = writeln!(
                s,
                "AP small {}   medium {}   large {}",
                opt(b.small),
                opt(b.medium),
                opt(b.large)
            );
        }
        if !self.map_excluded_classes.is_empty() {
            let _ = writeln!(
                s,
                "classes without ground truth (excluded from mAP): {:?}",
                self.map_excluded_classes
            );
        }
        s
    }

    /// `class_id,rank,score,recall,precision` rows for plotting.
    pub fn curves_csv(&self) -> String {
        let mut s = String::from("class_id,rank,score,recall,precision\n");
        for (c, pts) in &self.curves {
            for (k, (score, p)) in pts.iter().enumerate() {
                let _ = writeln!(s, "{c},{},{score},{},{}", k + 1, p.recall, p.precision);
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boxes::BoundingBox;
    use crate::metrics::GroundTruth;
    use crate::postprocess::Detection;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn bx(x: f64, y: f64, w: f64, h: f64) -> BoundingBox {
        BoundingBox::from_corners(x, y, x + w, y + h).unwrap()
    }

    fn rec(image: &str, bbox: BoundingBox, class_id: usize, score: f64) -> DetectionRecord {
        DetectionRecord::new(image, Detection { bbox, class_id, score })
    }

    fn perfect(gts: &GroundTruthSet) -> Vec<DetectionRecord> {
        gts.iter()
            .flat_map(|(img, v)| v.iter().map(move |g| rec(img, g.bbox, g.class_id, 0.9)))
            .collect()
    }

    fn set(items: &[(&str, BoundingBox, usize)]) -> GroundTruthSet {
        let mut s = GroundTruthSet::new();
        for (img, b, c) in items {
            s.entry(img.to_string())
                .or_default()
                .push(GroundTruth { bbox: *b, class_id: *c });
        }
        s
    }

    #[test]
    fn perfect_detections_score_one_everywhere() {
        let gts = set(&[("a", bx(0., 0., 50., 50.), 0), ("b", bx(10., 10., 20., 30.), 1)]);
        let r = ap_range(&perfect(&gts), &gts).unwrap();
        assert!(r.map_per_threshold.iter().all(|&m| m == Some(1.0)));
        assert_eq!(r.ap50_95, Some(1.0));
    }

    #[test]
    fn uniform_iou_point_six_sweep() {
        // every detection has IoU exactly 0.6 with its object
        let gts = set(&[("a", bx(0., 0., 8., 1.), 0), ("b", bx(0., 5., 8., 1.), 0)]);
        let dets = vec![
            rec("a", bx(2., 0., 8., 1.), 0, 0.9),
            rec("b", bx(2., 5., 8., 1.), 0, 0.8),
        ];
        let r = ap_range(&dets, &gts).unwrap();
        let expect: Vec<Option<f64>> = (0..10).map(|k| Some(if k <= 2 { 1.0 } else { 0.0 })).collect();
        assert_eq!(r.map_per_threshold, expect);
        assert!((r.ap50_95.unwrap() - 0.3).abs() < 1e-15);
    }

    #[test]
    fn empty_detections_all_zero() {
        let gts = set(&[("a", bx(0., 0., 8., 1.), 0)]);
        let r = ap_range(&[], &gts).unwrap();
        assert_eq!(r.ap50_95, Some(0.0));
        let e = evaluate(&[], &gts, &MatchConfig::default(), &[], EvalOptions::all()).unwrap();
        assert_eq!((e.overall.tp, e.overall.fp, e.overall.fn_count), (0, 0, 1));
        assert_eq!(e.map, Some(0.0));
    }

    #[test]
    fn small_only_leaves_other_buckets_absent() {
        let gts = set(&[("a", bx(0., 0., 10., 10.), 0), ("a", bx(50., 50., 20., 20.), 1)]);
        let s = ap_by_size(&perfect(&gts), &gts, &MatchConfig::default()).unwrap();
        assert_eq!(
            s,
            SizeAp {
                small: Some(1.0),
                medium: None,
                large: None
            }
        );
        let json = serde_json::to_string(&s).unwrap();
        assert_eq!(json, r#"{"small":1.0,"medium":null,"large":null}"#);
    }

    /// Buckets evaluated by running the plain evaluator on filtered copies:
    /// ground truth kept when in the bucket, detections kept by their own
    /// area. The synthetic set keeps every detection in the same bucket as
    /// the object it hits, so both views must agree.
    #[test]
    fn size_buckets_match_filtered_reevaluation() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let cfg = MatchConfig::default();
        let mut gts = GroundTruthSet::new();
        let mut dets = Vec::new();
        for i in 0..12 {
            let img = format!("img{i}");
            let mut v = Vec::new();
            for j in 0..6 {
                let side = [12.0, 20.0, 50.0, 70.0, 120.0, 150.0][rng.gen_range(0..6)];
                let b = bx(j as f64 * 200.0, 0.0, side, side);
                let c = rng.gen_range(0..3);
                v.push(GroundTruth { bbox: b, class_id: c });
                if rng.gen_bool(0.7) {
                    let off = rng.gen_range(0.0..0.15) * side;
                    dets.push(rec(&img, bx(b.x1() + off, 0.0, side, side), c, rng.gen_range(0.0..1.0)));
                }
                if rng.gen_bool(0.3) {
                    // stray false positive far from every object
                    let s2 = [10.0, 60.0, 110.0][rng.gen_range(0..3)];
                    dets.push(rec(
                        &img,
                        bx(j as f64 * 200.0, 500.0, s2, s2),
                        c,
                        rng.gen_range(0.0..1.0),
                    ));
                }
            }
            gts.insert(img, v);
        }
        let got = ap_by_size(&dets, &gts, &cfg).unwrap();
        let oracle = |b: SizeBucket| {
            let g: GroundTruthSet = gts
                .iter()
                .map(|(k, v)| {
                    (
                        k.clone(),
                        v.iter().filter(|x| cfg.bucket(x.bbox.area()) == b).copied().collect(),
                    )
                })
                .collect();
            let d: Vec<DetectionRecord> = dets
                .iter()
                .filter(|x| cfg.bucket(x.detection.bbox.area()) == b)
                .cloned()
                .collect();
            evaluate(&d, &g, &cfg, &[], EvalOptions::default()).unwrap().map
        };
        assert_eq!(got.small, oracle(SizeBucket::Small));
        assert_eq!(got.medium, oracle(SizeBucket::Medium));
        assert_eq!(got.large, oracle(SizeBucket::Large));
        assert!(got.small.is_some() && got.medium.is_some() && got.large.is_some());
    }

    #[test]
    fn report_formats() {
        let gts = set(&[("a", bx(0., 0., 8., 8.), 0), ("a", bx(20., 0., 8., 8.), 1)]);
        let dets = vec![
            rec("a", bx(0., 0., 8., 8.), 0, 0.9),
            rec("a", bx(40., 0., 8., 8.), 2, 0.4),
        ];
        let names = vec!["early_blight".to_string(), "late_blight".to_string()];
        let r = evaluate(&dets, &gts, &MatchConfig::default(), &names, EvalOptions::all()).unwrap();
        assert_eq!(r.map_excluded_classes, vec![2]);
        assert_eq!(r.map, Some(0.5));
        let json = r.to_json();
        let keys: Vec<usize> = [
            "\"iou_threshold\"",
            "\"images\"",
            "\"classes\"",
            "\"overall\"",
            "\"map\"",
            "\"ap_range\"",
        ]
        .iter()
        .map(|k| json.find(k).unwrap())
        .collect();
        assert!(keys.windows(2).all(|w| w[0] < w[1]));
        assert!(json.contains("\"fn\": 1"));
        assert!(json.contains("\"ap\": null"));
        let text = r.to_text();
        assert!(text.contains("early_blight"));
        assert!(text.contains("class_2"));
        let lines: Vec<&str> = text.lines().take(4).collect();
        assert!(lines.iter().all(|l| l.len() == lines[0].len()), "{text}");
        let csv = r.curves_csv();
        assert!(csv.starts_with("class_id,rank,score,recall,precision\n0,1,0.9,1,1\n"));
    }

    fn arb_eval() -> impl Strategy<Value = (GroundTruthSet, Vec<DetectionRecord>, u64)> {
        (1usize..5, any::<u64>()).prop_map(|(n_img, seed)| {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut gts = GroundTruthSet::new();
            let mut dets = Vec::new();
            for i in 0..n_img {
                let img = format!("i{i}");
                let mut v = Vec::new();
                for _ in 0..rng.gen_range(0..5) {
                    let b = bx(
                        rng.gen_range(0.0..40.0),
                        rng.gen_range(0.0..40.0),
                        rng.gen_range(4.0..30.0),
                        rng.gen_range(4.0..30.0),
                    );
                    v.push(GroundTruth {
                        bbox: b,
                        class_id: rng.gen_range(0..2),
                    });
                }
                for _ in 0..rng.gen_range(0..6) {
                    let b = bx(
                        rng.gen_range(0.0..40.0),
                        rng.gen_range(0.0..40.0),
                        rng.gen_range(4.0..30.0),
                        rng.gen_range(4.0..30.0),
                    );
                    // coarse scores produce ties on purpose
                    dets.push(rec(&img, b, rng.gen_range(0..2), rng.gen_range(0..4) as f64 / 4.0));
                }
                gts.insert(img, v);
            }
            (gts, dets, seed)
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn counts_and_order_invariance((gts, dets, seed) in arb_eval()) {
            let cfg = MatchConfig { iou_threshold: 0.3, ..MatchConfig::default() };
            let a = evaluate(&dets, &gts, &cfg, &[], EvalOptions::all()).unwrap();
            for c in &a.classes {
                let gt = gts.values().flatten().filter(|g| g.class_id == c.class_id).count();
                prop_assert_eq!(c.counts.tp + c.counts.fn_count, gt);
                for v in [c.counts.precision, c.counts.recall, c.counts.f1] {
                    prop_assert!((0.0..=1.0).contains(&v));
                }
            }
            let mut shuffled = dets.clone();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 1);
            for i in (1..shuffled.len()).rev() {
                shuffled.swap(i, rng.gen_range(0..=i));
            }
            let b = evaluate(&shuffled, &gts, &cfg, &[], EvalOptions::all()).unwrap();
            prop_assert_eq!(a.to_json(), b.to_json());
        }
    }
}
