use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DataError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    pub seed: u64,
}

impl SplitSpec {
    /// Parses `"8:1:1"`-style ratios; they are normalised to sum to one.
    pub fn parse(ratios: &str, seed: u64) -> Result<Self> {
        let parts: Vec<f64> = ratios
            .split(':')
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| DataError::InvalidSplit(format!("{ratios:?}: {e}")))?;
        let [a, b, c] = parts[..] else {
            return Err(DataError::InvalidSplit(format!("{ratios:?} needs three ratios")));
        };
        let sum = a + b + c;
        let spec = Self {
            train: a / sum,
            val: b / sum,
            test: c / sum,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let rs = [self.train, self.val, self.test];
        if rs.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(DataError::InvalidSplit(format!("ratios must be positive: {rs:?}")));
        }
        if (rs.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(DataError::InvalidSplit(format!("ratios must sum to 1: {rs:?}")));
        }
        Ok(())
    }

    /// `(n_train, n_val, n_test)`: validation and test sizes are
    /// `round(ratio · n)` (half away from zero), training takes the rest.
    pub fn sizes(&self, n: usize) -> Result<(usize, usize, usize)> {
        self.validate()?;
        if n < 3 {
            return Err(DataError::TooSmall(n));
        }
        let n_val = (self.val * n as f64).round() as usize;
        let n_test = (self.test * n as f64).round() as usize;
        if n_val + n_test > n {
            return Err(DataError::InvalidSplit(format!("{n} records cannot hold {n_val} + {n_test} held out")));
        }
        Ok((n - n_val - n_test, n_val, n_test))
    }
}

/// Seeded shuffle, then consecutive train / val / test partitions.
pub fn split<T: Clone>(items: &[T], spec: &SplitSpec) -> Result<(Vec<T>, Vec<T>, Vec<T>)> {
    let (n_train, n_val, _) = spec.sizes(items.len())?;
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let pick = |idx: &[usize]| idx.iter().map(|&i| items[i].clone()).collect::<Vec<_>>();
    Ok((
        pick(&order[..n_train]),
        pick(&order[n_train..n_train + n_val]),
        pick(&order[n_train + n_val..]),
    ))
}
