use std::path::PathBuf;

use anyhow::{anyhow, Context};
use clap::Args;
use leafdet::network::{forward, Architecture, ShapeReport, YoloBuilder};
use leafdet::postprocess::{decode_heads, filter_confidence, nms, to_json, to_lines};
use leafdet::{DetectionRecord, ImageBuffer, NetworkSpec, WeightStore};
use serde::Serialize;

use crate::failure::CmdResult;
use crate::output::{emit, json};
use crate::{Arch, Ctx, Format};

#[derive(Args, Debug)]
pub struct SummaryArgs {
    /// Number of classes; the config's class list when omitted.
    #[arg(long)]
    classes: Option<usize>,
    /// Square input side, a multiple of 32.
    #[arg(long)]
    input_size: Option<usize>,
    #[arg(long)]
    width_mult: Option<f64>,
    #[arg(long, value_enum)]
    arch: Option<Arch>,
}

#[derive(Serialize)]
struct SummaryReport<'a> {
    #[serde(flatten)]
    report: &'a ShapeReport,
    heads: Vec<[usize; 3]>,
}

/// Uses the config's network unless any shape flag is given, in which case
/// a preset is built from the flags (defaults: config class count, 416,
/// width 1, improved).
fn summary_spec(ctx: &Ctx, a: &SummaryArgs) -> CmdResult<NetworkSpec> {
    if a.classes.is_none() && a.input_size.is_none() && a.width_mult.is_none() && a.arch.is_none() {
        return Ok(ctx.config.network.build()?);
    }
    let classes = a.classes.unwrap_or(ctx.config.classes.len());
    let size = a.input_size.unwrap_or(416);
    let (builder, arch) = match a.arch.unwrap_or(Arch::Improved) {
        Arch::Improved => (YoloBuilder::improved(classes, size), Architecture::Improved),
        Arch::Reference => (YoloBuilder::reference(classes, size), Architecture::Reference),
    };
    Ok(builder.with_width(a.width_mult.unwrap_or(1.0)).build(arch)?)
}

pub fn summary(ctx: &Ctx, a: SummaryArgs) -> CmdResult {
    let spec = summary_spec(ctx, &a)?;
    let report = spec.infer_shapes()?;
    let heads = report.head_shapes();
    let text = match ctx.format {
        Format::Json => json(&SummaryReport { report: &report, heads }),
        Format::Text => {
            let w = report.nodes.iter().map(|n| n.id.len()).max().unwrap_or(4).max(4);
            let mut s = format!("{:<w$}  {:<10}  {:>14}  {:>10}\n", "node", "kind", "output", "params");
            for n in &report.nodes {
                let [h, wd, c] = n.output_shape;
                s += &format!(
                    "{:<w$}  {:<10}  {:>14}  {:>10}\n",
                    n.id,
                    n.kind,
                    format!("{h}x{wd}x{c}"),
                    n.params
                );
            }
            s += &format!("\ntotal params {}\n", report.total_params);
            let grids: Vec<String> = heads.iter().map(|[h, w, c]| format!("{h}x{w}x{c}")).collect();
            s += &format!("heads {}\n", grids.join(" "));
            s
        }
    };
    Ok(emit(None, &text)?)
}

#[derive(Args, Debug)]
pub struct DecodeArgs {
    /// Weight file matching the configured network.
    #[arg(long)]
    weights: PathBuf,
    /// PPM image whose size equals the network input.
    #[arg(long)]
    image: PathBuf,
    /// Confidence threshold; the config's value when omitted.
    #[arg(long)]
    conf: Option<f64>,
    /// NMS IoU threshold; the config's value when omitted.
    #[arg(long)]
    iou: Option<f64>,
    /// Detection file to write instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn decode(ctx: &Ctx, a: DecodeArgs) -> CmdResult {
    let spec = ctx.config.network.build()?;
    let weights = WeightStore::load_for(&a.weights, &spec)?;
    let img = ImageBuffer::read(&a.image)?;
    let [h, w, _] = spec.input_shape;
    if (img.height() as usize, img.width() as usize) != (h, w) {
        return Err(anyhow!(
            "image {} is {}x{}, network expects {w}x{h}",
            a.image.display(),
            img.width(),
            img.height()
        )
        .into());
    }
    let heads = forward(&spec, &weights, &img.to_tensor())?;
    let cands = decode_heads(&heads, &ctx.config.anchors, h)?;
    let pp = &ctx.config.postprocess;
    let kept = filter_confidence(&cands, a.conf.unwrap_or(pp.conf_threshold))?;
    let kept = nms(&kept, a.iou.unwrap_or(pp.iou_threshold))?;
    let id = a
        .image
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "image".into());
    let records: Vec<DetectionRecord> = kept.into_iter().map(|d| DetectionRecord::new(id.clone(), d)).collect();
    let text = match ctx.format {
        Format::Json => to_json(&records) + "\n",
        Format::Text => to_lines(&records),
    };
    Ok(emit(a.out.as_deref(), &text)?)
}

#[derive(Args, Debug)]
pub struct WeightsInitArgs {
    /// Destination weight file.
    #[arg(long)]
    out: PathBuf,
    /// Zero kernels and identity normalisation instead of seeded values.
    #[arg(long)]
    zeros: bool,
}

pub fn weights_init(ctx: &Ctx, a: WeightsInitArgs) -> CmdResult {
    let spec = ctx.config.network.build()?;
    let store = if a.zeros {
        WeightStore::zeros(&spec)?
    } else {
        WeightStore::seeded(&spec, ctx.seed)?
    };
    store
        .save(&a.out)
        .with_context(|| format!("writing {}", a.out.display()))?;
    let (_, total) = spec.count_params()?;
    let msg = match ctx.format {
        Format::Json => json(&serde_json::json!({
            "path": a.out,
            "nodes": store.len(),
            "params": total,
            "zeros": a.zeros,
            "seed": ctx.seed,
        })),
        Format::Text => format!("wrote {} ({} nodes, {total} params)\n", a.out.display(), store.len()),
    };
    Ok(emit(None, &msg)?)
}
