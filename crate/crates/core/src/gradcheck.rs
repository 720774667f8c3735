//! Central finite-difference checks for the activation derivatives and the
//! IoU-family box-loss gradients.
//!
//! Differences are always taken on the plain scalar loss functions, never on
//! the analytic gradient code. For CIoU the trade-off weight is frozen at its
//! value at the base point, matching how the analytic gradient treats it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::activations::{activate, activate_grad, ActivationKind};
use crate::boxes::{box_loss, box_loss_grad, ciou_alpha, ciou_loss_with_alpha, BoundingBox, IouLossKind};

/// Relative-error tolerance every check must meet.
pub const REL_TOLERANCE: f64 = 1e-4;
/// Denominator floor for the relative error, so components that are
/// analytically zero compare against rounding noise in absolute terms.
pub const REL_FLOOR: f64 = 1e-6;
/// Step for activation checks.
pub const ACTIVATION_STEP: f64 = 1e-5;
/// Box-loss step, relative to the ground-truth box scale.
pub const BOX_STEP_REL: f64 = 1e-5;

/// `|a − n| / max(|a|, |n|, REL_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

pub fn central_difference(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct CheckSummary {
    pub name: String,
    pub samples: usize,
    pub max_rel_error: f64,
    pub worst_input: Vec<f64>,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct GradcheckReport {
    pub seed: u64,
    pub tolerance: f64,
    pub checks: Vec<CheckSummary>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn worst(&self) -> f64 {
        self.checks.iter().map(|c| c.max_rel_error).fold(0.0, f64::max)
    }
}

struct Tracker {
    name: String,
    samples: usize,
    max: f64,
    worst: Vec<f64>,
}

impl Tracker {
    fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            samples: 0,
            max: 0.0,
            worst: Vec::new(),
        }
    }

    fn record(&mut self, err: f64, input: &[f64]) {
        self.samples += 1;
        if err > self.max || self.worst.is_empty() {
            self.max = err.max(self.max);
            self.worst = input.to_vec();
        }
    }

    fn finish(self) -> CheckSummary {
        CheckSummary {
            passed: self.max < REL_TOLERANCE,
            name: self.name,
            samples: self.samples,
            max_rel_error: self.max,
            worst_input: self.worst,
        }
    }
}

fn near_kink(kind: ActivationKind, x: f64) -> bool {
    let margin = 10.0 * ACTIVATION_STEP;
    match kind {
        ActivationKind::HardSwish => (x.abs() - 3.0).abs() < margin,
        ActivationKind::LeakyRelu { .. } => x.abs() < margin,
        _ => false,
    }
}

pub fn check_activation(kind: ActivationKind, samples: usize, rng: &mut impl Rng) -> CheckSummary {
    let mut t = Tracker::new(format!("activation/{}", kind.name()));
    while t.samples < samples {
        let x: f64 = rng.gen_range(-10.0..10.0);
        if near_kink(kind, x) {
            continue;
        }
        let f = |v: f64| activate(kind, v).expect("finite input");
        let numeric = central_difference(f, x, ACTIVATION_STEP);
        t.record(relative_error(activate_grad(kind, x), numeric), &[x]);
    }
    t.finish()
}

/// Random prediction/ground-truth pair away from shared-edge kinks.
pub fn random_box_pair(rng: &mut impl Rng) -> (BoundingBox, BoundingBox) {
    loop {
        let scale = 10f64.powf(rng.gen_range(0.0..2.0));
        let gt = BoundingBox::new(
            rng.gen_range(-1.0..1.0) * scale,
            rng.gen_range(-1.0..1.0) * scale,
            rng.gen_range(0.2..1.0) * scale,
            rng.gen_range(0.2..1.0) * scale,
        )
        .unwrap();
        let pred = BoundingBox::new(
            gt.cx + rng.gen_range(-0.8..0.8) * scale,
            gt.cy + rng.gen_range(-0.8..0.8) * scale,
            rng.gen_range(0.1..1.2) * scale,
            rng.gen_range(0.1..1.2) * scale,
        )
        .unwrap();
        let margin = 100.0 * BOX_STEP_REL * scale;
        let p = pred.corners();
        let g = gt.corners();
        let close = |a: f64, b: f64| (a - b).abs() < margin;
        let kink = (0..4).any(|i| close(p[i], g[i]))
            || close(p[0], g[2])
            || close(p[2], g[0])
            || close(p[1], g[3])
            || close(p[3], g[1]);
        if !kink {
            return (pred, gt);
        }
    }
}

fn perturbed(b: &BoundingBox, axis: usize, delta: f64) -> BoundingBox {
    let mut v = [b.cx, b.cy, b.w, b.h];
    v[axis] += delta;
    BoundingBox {
        cx: v[0],
        cy: v[1],
        w: v[2],
        h: v[3],
    }
}

/// Numerical gradient of the named loss at `pred`.
pub fn numeric_box_grad(kind: IouLossKind, pred: &BoundingBox, gt: &BoundingBox) -> [f64; 4] {
    let h = BOX_STEP_REL * gt.w.max(gt.h);
    let alpha = ciou_alpha(pred, gt);
    let f = |b: &BoundingBox| match kind {
        IouLossKind::Ciou => ciou_loss_with_alpha(b, gt, alpha).unwrap(),
        _ => box_loss(kind, b, gt).unwrap(),
    };
    std::array::from_fn(|axis| (f(&perturbed(pred, axis, h)) - f(&perturbed(pred, axis, -h))) / (2.0 * h))
}

pub fn check_box_loss(kind: IouLossKind, samples: usize, rng: &mut impl Rng) -> CheckSummary {
    let name = match kind {
        IouLossKind::Iou => "box/iou",
        IouLossKind::Giou => "box/giou",
        IouLossKind::Diou => "box/diou",
        IouLossKind::Ciou => "box/ciou",
    };
    let mut t = Tracker::new(name);
    for _ in 0..samples {
        let (pred, gt) = random_box_pair(rng);
        let analytic = box_loss_grad(kind, &pred, &gt).unwrap().grad;
        let numeric = numeric_box_grad(kind, &pred, &gt);
        let err = analytic
            .iter()
            .zip(&numeric)
            .map(|(&a, &n)| relative_error(a, n))
            .fold(0.0, f64::max);
        t.record(err, &[pred.cx, pred.cy, pred.w, pred.h, gt.cx, gt.cy, gt.w, gt.h]);
    }
    t.finish()
}

/// Runs every activation and box-loss check with `samples` points each.
pub fn run_all(samples: usize, seed: u64) -> GradcheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checks = Vec::new();
    for kind in [
        ActivationKind::leaky_default(),
        ActivationKind::Swish,
        ActivationKind::Mish,
        ActivationKind::HardSwish,
    ] {
        checks.push(check_activation(kind, samples, &mut rng));
    }
    for kind in [IouLossKind::Giou, IouLossKind::Diou, IouLossKind::Ciou] {
        checks.push(check_box_loss(kind, samples, &mut rng));
    }
    GradcheckReport {
        seed,
        tolerance: REL_TOLERANCE,
        checks,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!(relative_error(0.0, 1e-12) < 1e-5);
        assert!((relative_error(1.0, 1.1) - 0.1 / 1.1).abs() < 1e-15);
    }

    #[test]
    fn ciou_gradients_on_fifty_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(50);
        let s = check_box_loss(IouLossKind::Ciou, 50, &mut rng);
        assert!(s.passed, "{s:?}");
    }

    #[test]
    fn plain_iou_gradient_checks_too() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        assert!(check_box_loss(IouLossKind::Iou, 200, &mut rng).passed);
    }

    #[test]
    fn report_is_deterministic() {
        assert_eq!(run_all(20, 9), run_all(20, 9));
    }
}
