use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::Args;
use leafdet::dataio::{parse_voc_xml, Annotation, Manifest};
use leafdet::metrics::{evaluate, EvalOptions, MetricsError};
use leafdet::postprocess::{filter_confidence, nms as run_nms, parse_json, parse_lines, to_json, to_lines};
use leafdet::{Detection, DetectionRecord, GroundTruth, GroundTruthSet, MatchConfig};

use crate::failure::{CmdResult, Failure};
use crate::output::{emit, read_text};
use crate::{Ctx, Format};

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Directory of VOC XML files (image id = file stem) or a JSON manifest.
    #[arg(long)]
    gt: PathBuf,
    /// Detections in the line format or as a JSON array.
    #[arg(long)]
    dets: PathBuf,
    /// Match IoU threshold; the config's value when omitted.
    #[arg(long)]
    iou: Option<f64>,
    /// Also report AP at IoU 0.50:0.05:0.95.
    #[arg(long)]
    range: bool,
    /// Also report AP per object-size bucket.
    #[arg(long)]
    sizes: bool,
    /// Write per-class PR curves as CSV.
    #[arg(long, value_name = "CSV")]
    curves: Option<PathBuf>,
    /// Report file to write instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn to_ground_truth(id: &str, ann: &Annotation, classes: &[String]) -> CmdResult<Vec<GroundTruth>> {
    ann.objects
        .iter()
        .map(|o| {
            let class_id = classes.iter().position(|c| *c == o.name).ok_or_else(|| {
                Failure::data(anyhow!("{id}: class `{}` is not in the configured class list", o.name))
            })?;
            Ok(GroundTruth {
                bbox: o.bbox.to_bbox(),
                class_id,
            })
        })
        .collect()
}

fn read_annotation(path: &Path) -> CmdResult<Annotation> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(parse_voc_xml(&bytes).with_context(|| path.display().to_string())?)
}

/// Ground truth from a VOC directory or a manifest file.
pub fn load_ground_truth(path: &Path, classes: &[String]) -> CmdResult<GroundTruthSet> {
    let mut gts = GroundTruthSet::new();
    if path.is_dir() {
        let mut files = Vec::new();
        for entry in std::fs::read_dir(path).with_context(|| format!("reading {}", path.display()))? {
            let p = entry.with_context(|| format!("reading {}", path.display()))?.path();
            if p.extension().is_some_and(|e| e == "xml") {
                files.push(p);
            }
        }
        files.sort();
        for p in files {
            let id = p
                .file_stem()
                .expect("xml file has a stem")
                .to_string_lossy()
                .into_owned();
            let objects = to_ground_truth(&id, &read_annotation(&p)?, classes)?;
            gts.insert(id, objects);
        }
    } else if path.is_file() {
        let manifest = Manifest::load(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for (id, e) in &manifest.entries {
            let objects = to_ground_truth(id, &read_annotation(&base.join(&e.annotation))?, classes)?;
            gts.insert(id.clone(), objects);
        }
    } else {
        return Err(anyhow!("ground truth {} does not exist", path.display()).into());
    }
    Ok(gts)
}

/// Line format, or JSON when the file starts with `[`.
pub fn load_detections(path: &Path) -> CmdResult<Vec<DetectionRecord>> {
    let text = read_text(path)?;
    let parsed = if text.trim_start().starts_with('[') {
        parse_json(&text)
    } else {
        parse_lines(&text)
    };
    Ok(parsed.with_context(|| path.display().to_string())?)
}

pub fn eval(ctx: &Ctx, a: EvalArgs) -> CmdResult {
    let gts = load_ground_truth(&a.gt, &ctx.config.classes)?;
    let dets = load_detections(&a.dets)?;
    let cfg = MatchConfig {
        iou_threshold: a.iou.unwrap_or(ctx.config.eval.iou_threshold),
        ..ctx.config.eval
    };
    let opts = EvalOptions {
        range: a.range,
        sizes: a.sizes,
    };
    let report = evaluate(&dets, &gts, &cfg, &ctx.config.classes, opts).map_err(|e| match e {
        MetricsError::UnknownImage(_) => Failure::data(e),
        other => Failure::usage(other),
    })?;
    if let Some(p) = &a.curves {
        emit(Some(p), &report.curves_csv())?;
    }
    let text = match ctx.format {
        Format::Json => report.to_json() + "\n",
        Format::Text => report.to_text(),
    };
    Ok(emit(a.out.as_deref(), &text)?)
}

#[derive(Args, Debug)]
pub struct NmsArgs {
    /// Detection file (line format or JSON).
    #[arg(long = "in", value_name = "FILE")]
    input: PathBuf,
    /// Suppression IoU threshold; the config's value when omitted.
    #[arg(long)]
    iou: Option<f64>,
    /// Confidence threshold; the config's value when omitted.
    #[arg(long)]
    conf: Option<f64>,
    /// Output file instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Filters and suppresses each image independently; output is grouped by
/// image id in sorted order.
pub fn nms(ctx: &Ctx, a: NmsArgs) -> CmdResult {
    let pp = &ctx.config.postprocess;
    let (conf, iou) = (a.conf.unwrap_or(pp.conf_threshold), a.iou.unwrap_or(pp.iou_threshold));
    let mut per_image: BTreeMap<String, Vec<Detection>> = BTreeMap::new();
    for r in load_detections(&a.input)? {
        per_image.entry(r.image_id).or_default().push(r.detection);
    }
    let mut out = Vec::new();
    for (id, dets) in per_image {
        let kept = run_nms(&filter_confidence(&dets, conf)?, iou)?;
        out.extend(kept.into_iter().map(|d| DetectionRecord::new(id.clone(), d)));
    }
    let text = match ctx.format {
        Format::Json => to_json(&out) + "\n",
        Format::Text => to_lines(&out),
    };
    Ok(emit(a.out.as_deref(), &text)?)
}
