//! Train/validation/test partitioning.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// `round(n * fraction)`, guarded against the representation error of
/// fractions such as 0.3.
pub fn portion(n: usize, fraction: f64) -> usize {
    ((n as f64 * fraction) + 1e-9).round().min(n as f64) as usize
}

/// Shuffle `0..n` with a seeded generator and cut off the last
/// `portion(n, test_fraction)` indices as the test set.
pub fn shuffled_split(n: usize, test_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let held_out = idx.split_off(n - portion(n, test_fraction));
    (idx, held_out)
}

/// Contiguous, time-ordered ranges: train, then validation, then test.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SequentialSplit {
    pub train: usize,
    pub validation: usize,
    pub test: usize,
}

impl SequentialSplit {
    /// The last `test_fraction` of the sequence is held out; of the rest, the
    /// last `validation_fraction` is used for validation.
    pub fn new(n: usize, test_fraction: f64, validation_fraction: f64) -> Self {
        let test = portion(n, test_fraction);
        let validation = portion(n - test, validation_fraction);
        Self {
            train: n - test - validation,
            validation,
            test,
        }
    }

    pub fn train_range(&self) -> std::ops::Range<usize> {
        0..self.train
    }

    pub fn validation_range(&self) -> std::ops::Range<usize> {
        self.train..self.train + self.validation
    }

    pub fn test_range(&self) -> std::ops::Range<usize> {
        let start = self.train + self.validation;
        start..start + self.test
    }
}
