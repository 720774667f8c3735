//! Seeded inputs shared by the benchmarks.

use leafdet::metrics::{synthetic_from_counts, ClassCounts};
use leafdet::{BoundingBox, Detection, DetectionRecord, GroundTruthSet, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_tensor(shape: Vec<usize>, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0)).expect("non-empty shape")
}

/// Clustered candidates over a 416-pixel frame, as a detector head emits.
pub fn random_detections(n: usize, classes: usize, seed: u64) -> Vec<Detection> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centres: Vec<(f64, f64)> = (0..16)
        .map(|_| (rng.gen_range(40.0..376.0), rng.gen_range(40.0..376.0)))
        .collect();
    (0..n)
        .map(|_| {
            let (cx, cy) = centres[rng.gen_range(0..centres.len())];
            let bbox = BoundingBox::new(
                cx + rng.gen_range(-8.0..8.0),
                cy + rng.gen_range(-8.0..8.0),
                rng.gen_range(20.0..60.0),
                rng.gen_range(20.0..60.0),
            )
            .expect("positive size");
            Detection {
                bbox,
                class_id: rng.gen_range(0..classes),
                score: rng.gen_range(0.0..1.0),
            }
        })
        .collect()
}

/// Four-class evaluation set with the given number of hits per class.
pub fn eval_set(per_class: usize) -> (GroundTruthSet, Vec<DetectionRecord>) {
    let counts: Vec<ClassCounts> = (0..4)
        .map(|class_id| ClassCounts {
            class_id,
            tp: per_class,
            fp: per_class / 10,
            fn_count: per_class / 30,
        })
        .collect();
    synthetic_from_counts(&counts, 200)
}
