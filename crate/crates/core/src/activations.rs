//! Scalar activations and their derivatives.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::Tensor;

/// Darknet's conventional leaky slope.
pub const DEFAULT_LEAKY_SLOPE: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ActivationError {
    #[error("activation input is not finite: {0}")]
    NonFinite(f64),
    #[error("leaky-relu slope must lie in (0, 1), got {0}")]
    Slope(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ActivationKind {
    LeakyRelu { slope: f64 },
    Swish,
    Mish,
    HardSwish,
    Linear,
}

impl ActivationKind {
    pub fn leaky(slope: f64) -> Result<Self, ActivationError> {
        if slope > 0.0 && slope < 1.0 {
            Ok(Self::LeakyRelu { slope })
        } else {
            Err(ActivationError::Slope(slope))
        }
    }

    pub fn leaky_default() -> Self {
        Self::LeakyRelu {
            slope: DEFAULT_LEAKY_SLOPE,
        }
    }

    pub fn validate(&self) -> Result<(), ActivationError> {
        match *self {
            Self::LeakyRelu { slope } => Self::leaky(slope).map(|_| ()),
            _ => Ok(()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::LeakyRelu { .. } => "leaky_relu",
            Self::Swish => "swish",
            Self::Mish => "mish",
            Self::HardSwish => "hard_swish",
            Self::Linear => "linear",
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// ln(1 + eˣ) without overflow.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn eval(kind: ActivationKind, x: f64) -> f64 {
    match kind {
        ActivationKind::LeakyRelu { slope } => {
            if x >= 0.0 {
                x
            } else {
                slope * x
            }
        }
        ActivationKind::Swish => x * sigmoid(x),
        ActivationKind::Mish => x * softplus(x).tanh(),
        ActivationKind::HardSwish => {
            if x <= -3.0 {
                0.0
            } else if x >= 3.0 {
                x
            } else {
                x * (x + 3.0) / 6.0
            }
        }
        ActivationKind::Linear => x,
    }
}

pub fn activate(kind: ActivationKind, x: f64) -> Result<f64, ActivationError> {
    if !x.is_finite() {
        return Err(ActivationError::NonFinite(x));
    }
    Ok(eval(kind, x))
}

/// Analytic derivative. At kinks (0 for leaky-relu, ±3 for hard-swish) the
/// right-hand limit is returned.
pub fn activate_grad(kind: ActivationKind, x: f64) -> f64 {
    match kind {
        ActivationKind::LeakyRelu { slope } => {
            if x >= 0.0 {
                1.0
            } else {
                slope
            }
        }
        ActivationKind::Swish => {
            let s = sigmoid(x);
            s + x * s * (1.0 - s)
        }
        ActivationKind::Mish => {
            let t = softplus(x).tanh();
            t + x * (1.0 - t * t) * sigmoid(x)
        }
        ActivationKind::HardSwish => {
            if x < -3.0 {
                0.0
            } else if x >= 3.0 {
                1.0
            } else {
                (2.0 * x + 3.0) / 6.0
            }
        }
        ActivationKind::Linear => 1.0,
    }
}

/// Element-wise application on a tensor, evaluated in f64 and rounded to f32.
pub fn activate_tensor(kind: ActivationKind, t: &Tensor) -> Result<Tensor, ActivationError> {
    if let Some(&bad) = t.data().iter().find(|v| !v.is_finite()) {
        return Err(ActivationError::NonFinite(bad as f64));
    }
    if kind == ActivationKind::Linear {
        return Ok(t.clone());
    }
    Ok(t.map(|v| eval(kind, v as f64) as f32))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const ALL: [ActivationKind; 5] = [
        ActivationKind::LeakyRelu { slope: 0.1 },
        ActivationKind::Swish,
        ActivationKind::Mish,
        ActivationKind::HardSwish,
        ActivationKind::Linear,
    ];

    fn central(kind: ActivationKind, x: f64, h: f64) -> f64 {
        (eval(kind, x + h) - eval(kind, x - h)) / (2.0 * h)
    }

    #[test]
    fn hard_swish_values() {
        let hs = ActivationKind::HardSwish;
        assert_eq!(activate(hs, 0.0).unwrap(), 0.0);
        assert_eq!(activate(hs, -3.0).unwrap(), 0.0);
        assert_eq!(activate(hs, 3.0).unwrap(), 3.0);
        assert!((activate(hs, 1.0).unwrap() - 4.0 / 6.0).abs() < 1e-12);
        assert_eq!(activate(hs, -7.5).unwrap(), 0.0);
        assert_eq!(activate(hs, 12.25).unwrap(), 12.25);
    }

    #[test]
    fn other_values_at_zero() {
        assert_eq!(activate(ActivationKind::Swish, 0.0).unwrap(), 0.0);
        assert_eq!(activate(ActivationKind::Mish, 0.0).unwrap(), 0.0);
        let l = ActivationKind::leaky(0.1).unwrap();
        assert!((activate(l, -2.0).unwrap() + 0.2).abs() < 1e-15);
    }

    #[test]
    fn non_finite_rejected() {
        for k in ALL {
            assert!(activate(k, f64::NAN).is_err());
            assert!(activate(k, f64::INFINITY).is_err());
        }
    }

    #[test]
    fn leaky_slope_range() {
        assert!(ActivationKind::leaky(0.0).is_err());
        assert!(ActivationKind::leaky(1.0).is_err());
        assert!(ActivationKind::leaky(0.3).is_ok());
    }

    #[test]
    fn hard_swish_grad_values() {
        let hs = ActivationKind::HardSwish;
        assert_eq!(activate_grad(hs, 0.0), 0.5);
        assert_eq!(activate_grad(hs, -10.0), 0.0);
        assert_eq!(activate_grad(hs, 10.0), 1.0);
        // right limits at the kinks
        assert_eq!(activate_grad(hs, -3.0), -0.5);
        assert_eq!(activate_grad(hs, 3.0), 1.0);
    }

    #[test]
    fn mish_grad_at_fixed_points() {
        for x in [-2.0, -0.5, 0.7, 4.0] {
            let fd = central(ActivationKind::Mish, x, 1e-4);
            assert!((activate_grad(ActivationKind::Mish, x) - fd).abs() < 1e-5);
        }
    }

    #[test]
    fn hard_swish_lower_bound() {
        let min = activate(ActivationKind::HardSwish, -1.5).unwrap();
        assert!((min + 0.375).abs() < 1e-15);
        for i in -10_000..10_000 {
            let x = i as f64 * 1e-3;
            assert!(activate(ActivationKind::HardSwish, x).unwrap() >= -0.375);
        }
    }

    #[test]
    fn hard_swish_continuous_at_kinks() {
        let hs = ActivationKind::HardSwish;
        for k in [-3.0f64, 3.0] {
            let l = eval(hs, k - 1e-9);
            let r = eval(hs, k + 1e-9);
            assert!((l - r).abs() < 1e-7);
        }
    }

    #[test]
    fn grads_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for kind in ALL {
            let mut n = 0;
            while n < 100 {
                let x: f64 = rng.gen_range(-10.0..10.0);
                let kink = match kind {
                    ActivationKind::HardSwish => (x.abs() - 3.0).abs() < 1e-3,
                    ActivationKind::LeakyRelu { .. } => x.abs() < 1e-3,
                    _ => false,
                };
                if kink {
                    continue;
                }
                let fd = central(kind, x, 1e-5);
                let g = activate_grad(kind, x);
                assert!((g - fd).abs() < 1e-5, "{kind:?} at {x}: {g} vs {fd}");
                n += 1;
            }
        }
    }

    #[test]
    fn swish_and_hard_swish_converge_in_the_tails() {
        for x in [-20.0, 20.0] {
            let d = eval(ActivationKind::Swish, x) - eval(ActivationKind::HardSwish, x);
            assert!(d.abs() < 1e-3);
        }
    }

    #[test]
    fn serde_tags() {
        let k: ActivationKind = toml::from_str("kind = \"hard_swish\"").unwrap();
        assert_eq!(k, ActivationKind::HardSwish);
        let k: ActivationKind = toml::from_str("kind = \"leaky_relu\"\nslope = 0.2").unwrap();
        assert_eq!(k, ActivationKind::LeakyRelu { slope: 0.2 });
    }
}
