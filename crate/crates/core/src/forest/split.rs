//! Entropy, split scoring and randomized linear node tests.

use rand::seq::index;
use rand::Rng as _;

use super::{ClassCounts, ForestError, Result};
use crate::rng::Rng;
use crate::NUM_CLASSES;

fn plogp_sum(counts: &[usize]) -> f64 {
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let c = c as f64;
            c * c.log2()
        })
        .sum()
}

/// Shannon entropy, in bits, of the empirical class distribution.
pub fn entropy(counts: &[usize]) -> Result<f64> {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return Err(ForestError::EmptySet);
    }
    Ok(entropy_unchecked(counts, total))
}

fn entropy_unchecked(counts: &[usize], total: usize) -> f64 {
    let n = total as f64;
    // -sum p log p = log n - (1/n) sum c log c
    (n.log2() - plogp_sum(counts) / n).max(0.0)
}

/// `-sum_i |Q_i| / |Q| * E(Q_i)` over the two sides of a partition; an
/// empty side contributes nothing.
///
/// This is the negated size-weighted child entropy, always `<= 0`, and `0`
/// exactly when both sides are pure. The parent entropy is constant at a
/// node, so maximizing it maximizes classical information gain.
pub fn split_score(left: &[usize], right: &[usize]) -> Result<f64> {
    let nl: usize = left.iter().sum();
    let nr: usize = right.iter().sum();
    let n = nl + nr;
    if n == 0 {
        return Err(ForestError::EmptySet);
    }
    let side = |counts: &[usize], m: usize| if m == 0 { 0.0 } else { m as f64 * entropy_unchecked(counts, m) };
    Ok(-(side(left, nl) + side(right, nr)) / n as f64)
}

/// Weighted sum `w . x_S` over a feature subset `S`.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub feature_indices: Vec<u32>,
    pub weights: Vec<f32>,
}

impl Projection {
    pub fn new(feature_indices: Vec<u32>, weights: Vec<f32>) -> Result<Self> {
        if feature_indices.is_empty() || feature_indices.len() != weights.len() {
            return Err(ForestError::InvalidTest(format!(
                "{} indices with {} weights",
                feature_indices.len(),
                weights.len()
            )));
        }
        let mut sorted = feature_indices.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(ForestError::InvalidTest("duplicate feature index".into()));
        }
        Ok(Projection {
            feature_indices,
            weights,
        })
    }

    #[inline]
    pub fn project(&self, x: &[f32]) -> f32 {
        self.feature_indices
            .iter()
            .zip(&self.weights)
            .map(|(&i, &w)| w * x[i as usize])
            .sum()
    }

    pub fn max_index(&self) -> usize {
        self.feature_indices.iter().copied().max().unwrap_or(0) as usize
    }
}

/// A node test. Samples with `projection > threshold` go left, the rest
/// (including exact ties) go right.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitTest {
    pub projection: Projection,
    pub threshold: f32,
}

impl SplitTest {
    #[inline]
    pub fn goes_left(&self, x: &[f32]) -> bool {
        self.projection.project(x) > self.threshold
    }
}

/// Draws a random linear test direction: `n_features` distinct feature
/// indices chosen uniformly, with weights uniform on `[-1, 1]`. A single
/// feature gets weight `+1` or `-1`, i.e. an axis-aligned test.
pub fn sample_candidate_test(rng: &mut Rng, feature_dim: usize, n_features: usize) -> Result<Projection> {
    if n_features == 0 || feature_dim < n_features {
        return Err(ForestError::FeatureDim {
            feature_dim,
            n_features_per_test: n_features,
        });
    }
    let indices: Vec<u32> = index::sample(rng, feature_dim, n_features)
        .into_iter()
        .map(|i| i as u32)
        .collect();
    let weights = if n_features == 1 {
        vec![if rng.random::<bool>() { 1.0 } else { -1.0 }]
    } else {
        (0..n_features).map(|_| rng.random_range(-1.0f32..=1.0)).collect()
    };
    Ok(Projection {
        feature_indices: indices,
        weights,
    })
}

/// Best threshold for a projection over the samples at a node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdFit {
    pub threshold: f32,
    pub score: f64,
    pub n_left: usize,
}

/// Midpoint between two sorted, distinct projected values that routes
/// `lo` right and `hi` left under the `> threshold` rule.
fn midpoint(lo: f32, hi: f32) -> f32 {
    let mid = lo + (hi - lo) * 0.5;
    if mid >= lo && mid < hi {
        mid
    } else {
        lo
    }
}

/// Scans every midpoint between consecutive distinct projected values and
/// returns the one with the highest [`split_score`], subject to each side
/// holding at least `min_leaf` samples. Ties keep the lowest threshold.
/// `None` if no admissible threshold exists.
pub fn best_threshold(values: &mut [(f32, u8)], min_leaf: usize) -> Option<ThresholdFit> {
    let n = values.len();
    let min_leaf = min_leaf.max(1);
    if n < 2 * min_leaf {
        return None;
    }
    values.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));

    let mut right = [0usize; NUM_CLASSES];
    let mut left: ClassCounts = [0; NUM_CLASSES];
    for &(_, y) in values.iter() {
        left[y as usize] += 1;
    }
    // right = values[..i], left = values[i..]; track sum c log c incrementally
    let mut left_plogp = plogp_sum(&left);
    let mut right_plogp = 0.0f64;
    let plogp = |c: usize| if c == 0 { 0.0 } else { c as f64 * (c as f64).log2() };
    let mut best: Option<ThresholdFit> = None;
    for i in 1..n {
        let y = values[i - 1].1 as usize;
        left_plogp += plogp(left[y] - 1) - plogp(left[y]);
        right_plogp += plogp(right[y] + 1) - plogp(right[y]);
        left[y] -= 1;
        right[y] += 1;
        if i < min_leaf || n - i < min_leaf || values[i - 1].0 == values[i].0 {
            continue;
        }
        let (nr, nl) = (i as f64, (n - i) as f64);
        // n_i E(Q_i) = n_i log n_i - sum c log c
        let weighted = (nr * nr.log2() - right_plogp) + (nl * nl.log2() - left_plogp);
        let score = -(weighted.max(0.0)) / n as f64;
        if best.is_none_or(|b| score > b.score) {
            best = Some(ThresholdFit {
                threshold: midpoint(values[i - 1].0, values[i].0),
                score,
                n_left: n - i,
            });
        }
    }
    best
}
