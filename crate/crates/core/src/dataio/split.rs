use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{DataError, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split<T> {
    pub train: Vec<T>,
    pub val: Vec<T>,
    pub test: Vec<T>,
}

/// Seeded shuffle, then `floor(n·r)` items each for validation and test;
/// the remainder goes to training.
pub fn split_dataset<T: Clone>(items: &[T], ratios: (f64, f64, f64), seed: u64) -> Result<Split<T>> {
    let (tr, va, te) = ratios;
    if !(tr > 0.0 && va > 0.0 && te > 0.0) || ((tr + va + te) - 1.0).abs() > 1e-9 {
        return Err(DataError::Ratios(tr, va, te));
    }
    let mut shuffled = items.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n = items.len() as f64;
    // the epsilon keeps 12000·0.15 from flooring to 1799
    let n_val = (n * va + 1e-9).floor() as usize;
    let n_test = (n * te + 1e-9).floor() as usize;
    let test = shuffled.split_off(shuffled.len() - n_test);
    let val = shuffled.split_off(shuffled.len() - n_val);
    Ok(Split {
        train: shuffled,
        val,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn expanded_dataset_sizes() {
        let items: Vec<u32> = (0..12000).collect();
        let s = split_dataset(&items, (0.7, 0.15, 0.15), 1).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (8400, 1800, 1800));
        let s = split_dataset(&items[..10], (0.7, 0.15, 0.15), 1).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (8, 1, 1));
    }

    #[test]
    fn seeded_and_validated() {
        let items: Vec<u32> = (0..50).collect();
        let run = |seed| split_dataset(&items, (0.6, 0.2, 0.2), seed).unwrap();
        assert_eq!(run(3), run(3));
        assert_ne!(run(3), run(4));
        assert!(split_dataset(&items, (0.6, 0.2, 0.3), 3).is_err());
        assert!(split_dataset(&items, (1.0, 0.0, 0.0), 3).is_err());
        let e = split_dataset::<u32>(&[], (0.7, 0.15, 0.15), 0).unwrap();
        assert!(e.train.is_empty() && e.val.is_empty() && e.test.is_empty());
    }

    proptest! {
        #[test]
        fn partitions_input(n in 0usize..200, seed in any::<u64>()) {
            let items: Vec<usize> = (0..n).collect();
            let s = split_dataset(&items, (0.7, 0.15, 0.15), seed).unwrap();
            let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
            all.sort();
            prop_assert_eq!(all, items);
        }
    }
}
