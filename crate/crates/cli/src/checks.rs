use anyhow::anyhow;
use clap::Args;
use leafdet::boxes::box_loss;
use leafdet::gradcheck::run_all;
use leafdet::{BoundingBox, IouLossKind};

use crate::failure::{CmdResult, Failure};
use crate::output::{emit, json};
use crate::{Ctx, Format};

fn parse_corners(s: &str) -> Result<[f64; 4], String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("`{p}`: {e}")))
        .collect::<Result<_, _>>()?;
    v.try_into()
        .map_err(|v: Vec<f64>| format!("expected x1,y1,x2,y2, got {} values", v.len()))
}

#[derive(Args, Debug)]
pub struct LossArgs {
    /// Predicted box corners `x1,y1,x2,y2`.
    #[arg(long, value_parser = parse_corners, allow_hyphen_values = true)]
    pred: [f64; 4],
    /// Ground-truth box corners `x1,y1,x2,y2`.
    #[arg(long, value_parser = parse_corners, allow_hyphen_values = true)]
    gt: [f64; 4],
    /// iou, giou, diou or ciou.
    #[arg(long, default_value = "ciou")]
    kind: IouLossKind,
}

pub fn loss(ctx: &Ctx, a: LossArgs) -> CmdResult {
    let [px1, py1, px2, py2] = a.pred;
    let [gx1, gy1, gx2, gy2] = a.gt;
    let pred = BoundingBox::from_corners(px1, py1, px2, py2).map_err(|e| anyhow!("--pred: {e}"))?;
    let gt = BoundingBox::from_corners(gx1, gy1, gx2, gy2).map_err(|e| anyhow!("--gt: {e}"))?;
    let value = box_loss(a.kind, &pred, &gt)?;
    let text = match ctx.format {
        Format::Json => json(&serde_json::json!({ "kind": a.kind, "loss": value })),
        Format::Text => format!("{value:.6}\n"),
    };
    Ok(emit(None, &text)?)
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    /// Random points per check.
    #[arg(long, default_value_t = 1000)]
    samples: usize,
}

pub fn gradcheck(ctx: &Ctx, a: GradcheckArgs) -> CmdResult {
    if a.samples == 0 {
        return Err(anyhow!("--samples must be positive").into());
    }
    let report = run_all(a.samples, ctx.seed);
    let text = match ctx.format {
        Format::Json => json(&serde_json::json!({
            "seed": report.seed,
            "tolerance": report.tolerance,
            "checks": report.checks,
            "max_rel_error": report.worst(),
            "passed": report.passed(),
        })),
        Format::Text => {
            let mut s = String::new();
            for c in &report.checks {
                let verdict = if c.passed { "pass" } else { "FAIL" };
                s += &format!(
                    "{:<22} {:>6} samples  max rel err {:.3e}  {verdict}\n",
                    c.name, c.samples, c.max_rel_error
                );
            }
            s += &format!(
                "worst {:.3e} (tolerance {:.0e}, seed {})\n",
                report.worst(),
                report.tolerance,
                report.seed
            );
            s
        }
    };
    emit(None, &text)?;
    if report.passed() {
        Ok(())
    } else {
        Err(Failure::check(format!(
            "gradient check failed: worst relative error {:.3e}",
            report.worst()
        )))
    }
}
