use rand::seq::SliceRandom;

use super::{DatasetError, Result};
use crate::rng::Rng;

/// Assignment of each sample index to one of `k` test folds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldPlan {
    pub k: usize,
    pub assignments: Vec<usize>,
}

/// Seeded shuffle, then a contiguous partition into `k` folds whose sizes
/// differ by at most one (the first `n % k` folds take the extra sample).
pub fn kfold_split(n: usize, k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(DatasetError::InvalidArgument(format!("k must be at least 2, got {k}")));
    }
    if k > n {
        return Err(DatasetError::InvalidArgument(format!("k = {k} exceeds sample count {n}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut Rng::new(seed));
    let (base, extra) = (n / k, n % k);
    let mut assignments = vec![0; n];
    let mut start = 0;
    for fold in 0..k {
        let size = base + usize::from(fold < extra);
        for &idx in &order[start..start + size] {
            assignments[idx] = fold;
        }
        start += size;
    }
    Ok(FoldPlan { k, assignments })
}

impl FoldPlan {
    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in &self.assignments {
            sizes[f] += 1;
        }
        sizes
    }

    /// Sample indices held out in `fold`, ascending.
    pub fn test_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len()).filter(|&i| self.assignments[i] == fold).collect()
    }

    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len()).filter(|&i| self.assignments[i] != fold).collect()
    }
}
