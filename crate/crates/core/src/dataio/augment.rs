//! Geometric and photometric augmentations with box co-transforms.

use serde::{Deserialize, Serialize};

use super::image::ImageBuffer;
use super::voc::{Annotation, PixelBox};
use super::{DataError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum AugmentOp {
    /// `k` quarter turns anticlockwise.
    #[serde(rename = "rotate90_acw")]
    Rotate90Acw {
        k: u8,
    },
    MirrorHorizontal,
    Brightness {
        factor: f64,
    },
    ColorBalance {
        r: f64,
        g: f64,
        b: f64,
    },
    GaussianBlur {
        sigma: f64,
    },
}

impl AugmentOp {
    pub fn validate(&self) -> Result<()> {
        let gain = |v: f64| v > 0.0 && v <= 4.0;
        let ok = match *self {
            Self::Rotate90Acw { k } => (1..=3).contains(&k),
            Self::MirrorHorizontal => true,
            Self::Brightness { factor } => gain(factor),
            Self::ColorBalance { r, g, b } => gain(r) && gain(g) && gain(b),
            Self::GaussianBlur { sigma } => sigma > 0.0 && sigma.is_finite() && sigma <= 64.0,
        };
        if ok {
            Ok(())
        } else {
            Err(DataError::AugmentParam(format!("{self:?}")))
        }
    }

    /// Filename suffix for outputs of this op.
    pub fn tag(&self) -> String {
        match *self {
            Self::Rotate90Acw { k } => format!("rot{}", 90 * k as u32),
            Self::MirrorHorizontal => "mirror".into(),
            Self::Brightness { factor } => format!("bright{:03}", (factor * 100.0).round() as i64),
            Self::ColorBalance { r, g, b } => format!(
                "color{:03}-{:03}-{:03}",
                (r * 100.0).round() as i64,
                (g * 100.0).round() as i64,
                (b * 100.0).round() as i64
            ),
            Self::GaussianBlur { sigma } => format!("blur{:03}", (sigma * 100.0).round() as i64),
        }
    }

    pub fn is_geometric(&self) -> bool {
        matches!(self, Self::Rotate90Acw { .. } | Self::MirrorHorizontal)
    }
}

/// The nine variants: three rotations, mirror, colour balance, three
/// brightness levels and blur.
pub fn default_ops() -> Vec<AugmentOp> {
    vec![
        AugmentOp::Rotate90Acw { k: 1 },
        AugmentOp::Rotate90Acw { k: 2 },
        AugmentOp::Rotate90Acw { k: 3 },
        AugmentOp::MirrorHorizontal,
        AugmentOp::ColorBalance { r: 1.2, g: 1.0, b: 0.8 },
        AugmentOp::Brightness { factor: 0.9 },
        AugmentOp::Brightness { factor: 0.8 },
        AugmentOp::Brightness { factor: 0.6 },
        AugmentOp::GaussianBlur { sigma: 1.0 },
    ]
}

fn rotate_once(img: &ImageBuffer, ann: &Annotation) -> (ImageBuffer, Annotation) {
    let (w, h) = (img.width(), img.height());
    // new (x', y') shows old (W−1−y', x')
    let out = ImageBuffer::from_fn(h, w, |x, y, c| img.get(w - 1 - y, x, c)).expect("same pixel count");
    let objects = ann
        .objects
        .iter()
        .map(|o| {
            let b = o.bbox;
            let mut o = o.clone();
            o.bbox = PixelBox::new(b.y1, w - 1 - b.x2, b.y2, w - 1 - b.x1);
            o
        })
        .collect();
    let ann = Annotation {
        width: h,
        height: w,
        objects,
        ..ann.clone()
    };
    (out, ann)
}

fn mirror(img: &ImageBuffer, ann: &Annotation) -> (ImageBuffer, Annotation) {
    let w = img.width();
    let out = ImageBuffer::from_fn(w, img.height(), |x, y, c| img.get(w - 1 - x, y, c)).expect("same dims");
    let objects = ann
        .objects
        .iter()
        .map(|o| {
            let b = o.bbox;
            let mut o = o.clone();
            o.bbox = PixelBox::new(w - 1 - b.x2, b.y1, w - 1 - b.x1, b.y2);
            o
        })
        .collect();
    (out, Annotation { objects, ..ann.clone() })
}

fn gains(img: &ImageBuffer, g: [f64; 3]) -> ImageBuffer {
    let pixels = img
        .pixels()
        .iter()
        .enumerate()
        .map(|(i, &v)| (v as f64 * g[i % 3]).round().clamp(0.0, 255.0) as u8)
        .collect();
    ImageBuffer::new(img.width(), img.height(), pixels).expect("same dims")
}

/// Normalised 1-D Gaussian with radius `ceil(3σ)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as i64;
    let k: Vec<f64> = (-r..=r)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable blur with clamp-to-edge borders. Both passes accumulate in
/// `f64`; rounding happens once at the end.
fn blur(img: &ImageBuffer, sigma: f64) -> ImageBuffer {
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as i64;
    let (w, h) = (img.width() as i64, img.height() as i64);
    let at = |x: i64, y: i64| (y * w + x) as usize * 3;
    let mut tmp = vec![0f64; img.pixels().len()];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                tmp[at(x, y) + c] = k
                    .iter()
                    .enumerate()
                    .map(|(j, &kv)| kv * img.pixels()[at((x + j as i64 - r).clamp(0, w - 1), y) + c] as f64)
                    .sum();
            }
        }
    }
    let mut out = vec![0u8; tmp.len()];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let v: f64 = k
                    .iter()
                    .enumerate()
                    .map(|(j, &kv)| kv * tmp[at(x, (y + j as i64 - r).clamp(0, h - 1)) + c])
                    .sum();
                out[at(x, y) + c] = v.round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    ImageBuffer::new(img.width(), img.height(), out).expect("same dims")
}

pub fn apply_augment(img: &ImageBuffer, ann: &Annotation, op: AugmentOp) -> Result<(ImageBuffer, Annotation)> {
    op.validate()?;
    if img.width() != ann.width || img.height() != ann.height {
        return Err(DataError::DimMismatch {
            image: (img.width(), img.height()),
            annotation: (ann.width, ann.height),
        });
    }
    ann.validate()?;
    Ok(match op {
        AugmentOp::Rotate90Acw { k } => {
            let mut cur = (img.clone(), ann.clone());
            for _ in 0..k {
                cur = rotate_once(&cur.0, &cur.1);
            }
            cur
        }
        AugmentOp::MirrorHorizontal => mirror(img, ann),
        AugmentOp::Brightness { factor } => (gains(img, [factor; 3]), ann.clone()),
        AugmentOp::ColorBalance { r, g, b } => (gains(img, [r, g, b]), ann.clone()),
        AugmentOp::GaussianBlur { sigma } => (blur(img, sigma), ann.clone()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::voc::VocObject;
    use proptest::prelude::*;

    fn sample(w: u32, h: u32, seed: u32) -> (ImageBuffer, Annotation) {
        let img = ImageBuffer::from_fn(w, h, |x, y, c| {
            (x.wrapping_mul(37) ^ y.wrapping_mul(11) ^ seed ^ c as u32) as u8
        })
        .unwrap();
        let ann = Annotation {
            filename: "s.ppm".into(),
            width: w,
            height: h,
            depth: 3,
            objects: vec![
                VocObject {
                    name: "a".into(),
                    bbox: PixelBox::new(0, 0, w - 1, h - 1),
                    difficult: None,
                },
                VocObject {
                    name: "b".into(),
                    bbox: PixelBox::new(w / 4, h / 3, w / 4 + 1, h / 3 + 1),
                    difficult: Some(true),
                },
            ],
        };
        (img, ann)
    }

    #[test]
    fn mirror_example_box() {
        let img = ImageBuffer::new(416, 416, vec![0; 416 * 416 * 3]).unwrap();
        let ann = Annotation {
            filename: "x.ppm".into(),
            width: 416,
            height: 416,
            depth: 3,
            objects: vec![VocObject {
                name: "early_blight".into(),
                bbox: PixelBox::new(9, 19, 109, 219),
                difficult: None,
            }],
        };
        let (_, m) = apply_augment(&img, &ann, AugmentOp::MirrorHorizontal).unwrap();
        assert_eq!(m.objects[0].bbox, PixelBox::new(306, 19, 406, 219));
    }

    #[test]
    fn rotation_maps_points() {
        // single bright pixel at (x, y) lands at (y, W−1−x)
        let (w, h) = (5, 3);
        let img = ImageBuffer::from_fn(w, h, |x, y, _| if (x, y) == (1, 2) { 255 } else { 0 }).unwrap();
        let ann = Annotation {
            filename: "p.ppm".into(),
            width: w,
            height: h,
            depth: 3,
            objects: vec![],
        };
        let (r, a) = apply_augment(&img, &ann, AugmentOp::Rotate90Acw { k: 1 }).unwrap();
        assert_eq!((r.width(), r.height(), a.width, a.height), (3, 5, 3, 5));
        assert_eq!(r.get(2, w - 1 - 1, 0), 255);
    }

    #[test]
    fn brightness_one_is_identity_and_dim_mismatch_errors() {
        let (img, ann) = sample(9, 7, 1);
        assert_eq!(
            apply_augment(&img, &ann, AugmentOp::Brightness { factor: 1.0 })
                .unwrap()
                .0,
            img
        );
        let bad = Annotation { width: 8, ..ann };
        assert!(matches!(
            apply_augment(&img, &bad, AugmentOp::MirrorHorizontal),
            Err(DataError::DimMismatch { .. })
        ));
        assert!(AugmentOp::Rotate90Acw { k: 4 }.validate().is_err());
        assert!(AugmentOp::Brightness { factor: 0.0 }.validate().is_err());
    }

    #[test]
    fn blur_keeps_constant_images() {
        let img = ImageBuffer::new(6, 4, vec![137; 72]).unwrap();
        let ann = Annotation {
            filename: "c.ppm".into(),
            width: 6,
            height: 4,
            depth: 3,
            objects: vec![],
        };
        for sigma in [0.3, 1.0, 2.5] {
            assert_eq!(
                apply_augment(&img, &ann, AugmentOp::GaussianBlur { sigma }).unwrap().0,
                img
            );
        }
        assert_eq!(gaussian_kernel(1.0).len(), 7);
        assert!((gaussian_kernel(0.7).iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn default_tags_are_unique() {
        let mut tags: Vec<String> = default_ops().iter().map(AugmentOp::tag).collect();
        assert_eq!(tags.len(), 9);
        tags.sort();
        tags.dedup();
        assert_eq!(tags.len(), 9);
        let toml_ops: Vec<AugmentOp> = default_ops()
            .iter()
            .map(|o| toml::from_str(&toml::to_string(o).unwrap()).unwrap())
            .collect();
        assert_eq!(toml_ops, default_ops());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn rotation_group_and_mirror_involution(w in 2u32..24, h in 2u32..24, seed in any::<u32>(), k in 1u8..=3) {
            let (img, ann) = sample(w, h, seed);
            let mut cur = (img.clone(), ann.clone());
            for _ in 0..4 {
                cur = apply_augment(&cur.0, &cur.1, AugmentOp::Rotate90Acw { k: 1 }).unwrap();
            }
            prop_assert_eq!(&cur, &(img.clone(), ann.clone()));
            let a = apply_augment(&img, &ann, AugmentOp::Rotate90Acw { k }).unwrap();
            let b = apply_augment(&a.0, &a.1, AugmentOp::Rotate90Acw { k: 4 - k }).unwrap();
            prop_assert_eq!(&b, &(img.clone(), ann.clone()));
            let m = apply_augment(&img, &ann, AugmentOp::MirrorHorizontal).unwrap();
            prop_assert_eq!(apply_augment(&m.0, &m.1, AugmentOp::MirrorHorizontal).unwrap(), (img.clone(), ann.clone()));
            for out in [&a.1, &m.1] {
                out.validate().unwrap();
                for (o, p) in out.objects.iter().zip(&ann.objects) {
                    prop_assert_eq!(o.bbox.area(), p.bbox.area());
                }
            }
        }

        #[test]
        fn blur_stays_within_input_range(w in 1u32..12, h in 1u32..12, seed in any::<u32>(), sigma in 0.2f64..3.0) {
            let (img, _) = sample(w.max(2), h.max(2), seed);
            let ann = Annotation { filename: "b".into(), width: img.width(), height: img.height(), depth: 3, objects: vec![] };
            let out = apply_augment(&img, &ann, AugmentOp::GaussianBlur { sigma }).unwrap().0;
            let lo = *img.pixels().iter().min().unwrap();
            let hi = *img.pixels().iter().max().unwrap();
            prop_assert!(out.pixels().iter().all(|&v| v >= lo && v <= hi));
        }
    }
}
