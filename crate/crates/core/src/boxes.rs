//! Axis-aligned box geometry: IoU, the GIoU/DIoU/CIoU regression losses with
//! analytic gradients, grid-offset decoding and confidence targets.
//!
//! Boxes are stored in centre form. Gradients are taken with respect to
//! `(cx, cy, w, h)` of the predicted box; the ground truth is constant.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::activations::sigmoid;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BoxError {
    #[error("box extents must be finite and non-negative (w = {w}, h = {h})")]
    InvalidExtent { w: f64, h: f64 },
    #[error("corner box has x1 > x2 or y1 > y2: ({x1}, {y1}, {x2}, {y2})")]
    InvertedCorners { x1: f64, y1: f64, x2: f64, y2: f64 },
    #[error("box coordinates must be finite")]
    NonFinite,
    #[error("ground-truth box has zero area")]
    DegenerateGroundTruth,
    #[error("aspect-ratio term needs non-zero heights (pred h = {pred}, gt h = {gt})")]
    ZeroHeight { pred: f64, gt: f64 },
    #[error("IoU must lie in [0, 1], got {0}")]
    IouRange(f64),
    #[error("decode context invalid: {0}")]
    Context(String),
}

pub type Result<T> = std::result::Result<T, BoxError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl BoundingBox {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        if !(cx.is_finite() && cy.is_finite()) {
            return Err(BoxError::NonFinite);
        }
        if !(w.is_finite() && h.is_finite() && w >= 0.0 && h >= 0.0) {
            return Err(BoxError::InvalidExtent { w, h });
        }
        Ok(Self { cx, cy, w, h })
    }

    pub fn from_corners(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        if ![x1, y1, x2, y2].iter().all(|v| v.is_finite()) {
            return Err(BoxError::NonFinite);
        }
        if x1 > x2 || y1 > y2 {
            return Err(BoxError::InvertedCorners { x1, y1, x2, y2 });
        }
        Ok(Self {
            cx: (x1 + x2) / 2.0,
            cy: (y1 + y2) / 2.0,
            w: x2 - x1,
            h: y2 - y1,
        })
    }

    pub fn x1(&self) -> f64 {
        self.cx - self.w / 2.0
    }
    pub fn y1(&self) -> f64 {
        self.cy - self.h / 2.0
    }
    pub fn x2(&self) -> f64 {
        self.cx + self.w / 2.0
    }
    pub fn y2(&self) -> f64 {
        self.cy + self.h / 2.0
    }

    pub fn corners(&self) -> [f64; 4] {
        [self.x1(), self.y1(), self.x2(), self.y2()]
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    /// Area from the corner coordinates. Agrees bit-for-bit with the
    /// intersection of a box with itself, which keeps IoU(a, a) exactly 1.
    fn corner_area(&self) -> f64 {
        (self.x2() - self.x1()) * (self.y2() - self.y1())
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            cx: self.cx * s,
            cy: self.cy * s,
            w: self.w * s,
            h: self.h * s,
        }
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        Self {
            cx: self.cx + dx,
            cy: self.cy + dy,
            ..*self
        }
    }
}

fn intersection(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let iw = (a.x2().min(b.x2()) - a.x1().max(b.x1())).max(0.0);
    let ih = (a.y2().min(b.y2()) - a.y1().max(b.y1())).max(0.0);
    iw * ih
}

/// Intersection over union; 0 whenever the union has no area.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let inter = intersection(a, b);
    let union = a.corner_area() + b.corner_area() - inter;
    if union > 0.0 {
        (inter / union).clamp(0.0, 1.0)
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IouLossKind {
    Iou,
    Giou,
    Diou,
    Ciou,
}

impl std::str::FromStr for IouLossKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "iou" => Ok(Self::Iou),
            "giou" => Ok(Self::Giou),
            "diou" => Ok(Self::Diou),
            "ciou" => Ok(Self::Ciou),
            other => Err(format!("unknown loss kind `{other}`")),
        }
    }
}

/// Loss value with its gradient w.r.t. the predicted `(cx, cy, w, h)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWithGrad {
    pub loss: f64,
    pub grad: [f64; 4],
}

fn check_pair(kind: IouLossKind, pred: &BoundingBox, gt: &BoundingBox) -> Result<()> {
    if gt.area() <= 0.0 {
        return Err(BoxError::DegenerateGroundTruth);
    }
    if kind == IouLossKind::Ciou && (pred.h == 0.0 || gt.h == 0.0) {
        return Err(BoxError::ZeroHeight { pred: pred.h, gt: gt.h });
    }
    Ok(())
}

/// Aspect-ratio consistency term `(4/π²)(atan(w_gt/h_gt) − atan(w/h))²`.
pub fn aspect_term(pred: &BoundingBox, gt: &BoundingBox) -> f64 {
    let d = (gt.w / gt.h).atan() - (pred.w / pred.h).atan();
    4.0 / (PI * PI) * d * d
}

/// Trade-off weight `v / ((1 − IoU) + v)`, zero when `v` vanishes.
pub fn ciou_alpha(pred: &BoundingBox, gt: &BoundingBox) -> f64 {
    let v = aspect_term(pred, gt);
    if v == 0.0 {
        0.0
    } else {
        v / ((1.0 - iou(pred, gt)) + v)
    }
}

/// Evaluates the chosen loss and its gradient in one pass. For CIoU `alpha`
/// overrides the trade-off weight; `None` uses [`ciou_alpha`] at this point.
/// Either way `alpha` is held constant when differentiating.
fn evaluate(kind: IouLossKind, pred: &BoundingBox, gt: &BoundingBox, alpha: Option<f64>) -> Result<LossWithGrad> {
    check_pair(kind, pred, gt)?;
    let [px1, py1, px2, py2] = pred.corners();
    let [gx1, gy1, gx2, gy2] = gt.corners();

    // Gradients below are w.r.t. the corners (x1, y1, x2, y2) and converted
    // to centre form at the end.
    let iw_raw = px2.min(gx2) - px1.max(gx1);
    let ih_raw = py2.min(gy2) - py1.max(gy1);
    let (iw, ih) = (iw_raw.max(0.0), ih_raw.max(0.0));
    let overlap = iw_raw > 0.0 && ih_raw > 0.0;
    let diw = [
        if overlap && px1 > gx1 { -1.0 } else { 0.0 },
        if overlap && px2 < gx2 { 1.0 } else { 0.0 },
    ];
    let dih = [
        if overlap && py1 > gy1 { -1.0 } else { 0.0 },
        if overlap && py2 < gy2 { 1.0 } else { 0.0 },
    ];
    let inter = iw * ih;
    let d_inter = [diw[0] * ih, dih[0] * iw, diw[1] * ih, dih[1] * iw];

    let area = pred.corner_area();
    let d_area = [-pred.h, -pred.w, pred.h, pred.w];
    let union = area + gt.corner_area() - inter;
    let d_union: [f64; 4] = std::array::from_fn(|i| d_area[i] - d_inter[i]);
    let iou = if union > 0.0 { inter / union } else { 0.0 };
    let d_iou: [f64; 4] = std::array::from_fn(|i| (d_inter[i] * union - inter * d_union[i]) / (union * union));

    let mut loss = 1.0 - iou;
    let mut g: [f64; 4] = std::array::from_fn(|i| -d_iou[i]);

    if kind != IouLossKind::Iou {
        let cw = px2.max(gx2) - px1.min(gx1);
        let ch = py2.max(gy2) - py1.min(gy1);
        let dcw = [if px1 < gx1 { -1.0 } else { 0.0 }, if px2 > gx2 { 1.0 } else { 0.0 }];
        let dch = [if py1 < gy1 { -1.0 } else { 0.0 }, if py2 > gy2 { 1.0 } else { 0.0 }];
        let d_cw = [dcw[0], 0.0, dcw[1], 0.0];
        let d_ch = [0.0, dch[0], 0.0, dch[1]];

        if kind == IouLossKind::Giou {
            let c = cw * ch;
            loss += (c - union) / c;
            for i in 0..4 {
                let dc = d_cw[i] * ch + cw * d_ch[i];
                // d/dθ (C − U)/C = −(dU·C − U·dC)/C²
                g[i] -= (d_union[i] * c - union * dc) / (c * c);
            }
        } else {
            let (dx, dy) = (pred.cx - gt.cx, pred.cy - gt.cy);
            let rho2 = dx * dx + dy * dy;
            let d_rho2 = [dx, dy, dx, dy];
            let c2 = cw * cw + ch * ch;
            loss += rho2 / c2;
            for i in 0..4 {
                let dc2 = 2.0 * (cw * d_cw[i] + ch * d_ch[i]);
                g[i] += (d_rho2[i] * c2 - rho2 * dc2) / (c2 * c2);
            }
            if kind == IouLossKind::Ciou {
                let v = aspect_term(pred, gt);
                let a = alpha.unwrap_or_else(|| ciou_alpha(pred, gt));
                loss += a * v;
                let delta = (gt.w / gt.h).atan() - (pred.w / pred.h).atan();
                let k = 8.0 / (PI * PI) * delta / (pred.w * pred.w + pred.h * pred.h);
                let dv_dw = -k * pred.h;
                let dv_dh = k * pred.w;
                let dv = [-dv_dw, -dv_dh, dv_dw, dv_dh];
                for i in 0..4 {
                    g[i] += a * dv[i];
                }
            }
        }
    }

    let grad = [g[0] + g[2], g[1] + g[3], 0.5 * (g[2] - g[0]), 0.5 * (g[3] - g[1])];
    Ok(LossWithGrad { loss, grad })
}

pub fn box_loss(kind: IouLossKind, pred: &BoundingBox, gt: &BoundingBox) -> Result<f64> {
    evaluate(kind, pred, gt, None).map(|r| r.loss)
}

pub fn box_loss_grad(kind: IouLossKind, pred: &BoundingBox, gt: &BoundingBox) -> Result<LossWithGrad> {
    evaluate(kind, pred, gt, None)
}

pub fn giou_loss(pred: &BoundingBox, gt: &BoundingBox) -> Result<f64> {
    box_loss(IouLossKind::Giou, pred, gt)
}

pub fn diou_loss(pred: &BoundingBox, gt: &BoundingBox) -> Result<f64> {
    box_loss(IouLossKind::Diou, pred, gt)
}

pub fn ciou_loss(pred: &BoundingBox, gt: &BoundingBox) -> Result<f64> {
    box_loss(IouLossKind::Ciou, pred, gt)
}

/// Gradient of the CIoU loss with the trade-off weight held constant.
pub fn ciou_grad(pred: &BoundingBox, gt: &BoundingBox) -> Result<[f64; 4]> {
    evaluate(IouLossKind::Ciou, pred, gt, None).map(|r| r.grad)
}

/// CIoU loss evaluated with a caller-supplied trade-off weight. Finite
/// differences of this function at fixed `alpha` are what [`ciou_grad`]
/// approximates.
pub fn ciou_loss_with_alpha(pred: &BoundingBox, gt: &BoundingBox, alpha: f64) -> Result<f64> {
    evaluate(IouLossKind::Ciou, pred, gt, Some(alpha)).map(|r| r.loss)
}

/// Grid cell, anchor prior (grid units) and grid geometry for one prediction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodeContext {
    pub cell: (usize, usize),
    pub prior: (f64, f64),
    pub grid_size: usize,
    pub stride: f64,
}

impl DecodeContext {
    pub fn new(cell: (usize, usize), prior: (f64, f64), grid_size: usize, stride: f64) -> Result<Self> {
        if grid_size == 0 || cell.0 >= grid_size || cell.1 >= grid_size {
            return Err(BoxError::Context(format!(
                "cell {cell:?} outside a {grid_size}×{grid_size} grid"
            )));
        }
        if !(prior.0 > 0.0 && prior.1 > 0.0 && prior.0.is_finite() && prior.1.is_finite()) {
            return Err(BoxError::Context(format!("prior {prior:?} must be positive")));
        }
        if !(stride > 0.0 && stride.is_finite()) {
            return Err(BoxError::Context(format!("stride {stride} must be positive")));
        }
        Ok(Self {
            cell,
            prior,
            grid_size,
            stride,
        })
    }
}

/// `c + σ(t)` kept strictly inside `(c, c + 1)` even when σ saturates.
fn cell_offset(c: usize, t: f64) -> f64 {
    let lo = c as f64;
    let hi = lo + 1.0;
    let v = lo + sigmoid(t);
    if v >= hi {
        f64::from_bits(hi.to_bits() - 1)
    } else if v <= lo {
        if lo == 0.0 {
            f64::MIN_POSITIVE
        } else {
            f64::from_bits(lo.to_bits() + 1)
        }
    } else {
        v
    }
}

/// Offsets `(t_x, t_y, t_w, t_h)` to a box in grid units:
/// `b_x = σ(t_x) + c_x`, `b_w = p_w·exp(t_w)` and likewise for y/h.
pub fn decode_box(offsets: [f64; 4], ctx: &DecodeContext) -> Result<BoundingBox> {
    let [tx, ty, tw, th] = offsets;
    if !offsets.iter().all(|v| v.is_finite()) {
        return Err(BoxError::NonFinite);
    }
    let w = ctx.prior.0 * tw.exp();
    let h = ctx.prior.1 * th.exp();
    BoundingBox::new(cell_offset(ctx.cell.0, tx), cell_offset(ctx.cell.1, ty), w, h)
}

/// Training target confidence: `p_r(object) · IoU(pred, truth)`.
pub fn confidence(objectness: bool, iou_pred_truth: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&iou_pred_truth) {
        return Err(BoxError::IouRange(iou_pred_truth));
    }
    Ok(if objectness { iou_pred_truth } else { 0.0 })
}
