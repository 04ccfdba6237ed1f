//! Random decision forest over feature vectors, with randomized linear
//! node tests and averaged leaf posteriors.

mod split;
mod tree;

pub use split::{best_threshold, entropy, sample_candidate_test, split_score, Projection, SplitTest, ThresholdFit};
pub use tree::{grow_tree, DecisionTree, Node, Posterior};

use rand::Rng as _;
use rayon::prelude::*;

use crate::features::FeatureMatrix;
use crate::rng::{derive_seed, Rng};
use crate::tensor::argmax;
use crate::NUM_CLASSES;

pub type ClassCounts = [usize; NUM_CLASSES];

#[derive(Debug, thiserror::Error)]
pub enum ForestError {
    #[error("empty sample set")]
    EmptySet,
    #[error("invalid split test: {0}")]
    InvalidTest(String),
    #[error("feature dimension {feature_dim} is smaller than {n_features_per_test} features per test")]
    FeatureDim { feature_dim: usize, n_features_per_test: usize },
    #[error("invalid forest config: {0}")]
    Config(String),
    #[error("{rows} feature rows but {labels} labels")]
    LabelCount { rows: usize, labels: usize },
    #[error("label {0} out of range")]
    Label(usize),
    #[error("non-finite feature value")]
    NonFinite,
    #[error("feature vector has length {got}, forest expects {expected}")]
    InputWidth { expected: usize, got: usize },
    #[error("corrupt forest: {0}")]
    Corrupt(String),
}

pub type Result<T> = std::result::Result<T, ForestError>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub n_candidate_tests: usize,
    pub n_features_per_test: usize,
    /// Smallest information gain (bits) for which a node is split.
    pub min_gain: f64,
    pub min_samples_leaf: usize,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 100,
            max_depth: 16,
            n_candidate_tests: 64,
            n_features_per_test: 8,
            min_gain: 1e-4,
            min_samples_leaf: 2,
            seed: 0,
        }
    }
}

impl ForestConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_trees", self.n_trees),
            ("max_depth", self.max_depth),
            ("n_candidate_tests", self.n_candidate_tests),
            ("n_features_per_test", self.n_features_per_test),
            ("min_samples_leaf", self.min_samples_leaf),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(ForestError::Config(format!("{name} must be positive")));
            }
        }
        if !(self.min_gain >= 0.0 && self.min_gain.is_finite()) {
            return Err(ForestError::Config(format!("min_gain must be finite and >= 0, got {}", self.min_gain)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RandomForest {
    feature_dim: usize,
    trees: Vec<DecisionTree>,
}

impl RandomForest {
    pub fn from_trees(feature_dim: usize, trees: Vec<DecisionTree>) -> Result<Self> {
        if trees.is_empty() {
            return Err(ForestError::Corrupt("forest has no trees".into()));
        }
        for t in &trees {
            DecisionTree::from_nodes(t.nodes().to_vec(), feature_dim)?;
        }
        Ok(RandomForest { feature_dim, trees })
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn trees(&self) -> &[DecisionTree] {
        &self.trees
    }

    /// Mean of the leaf posteriors reached in every tree.
    pub fn posterior(&self, x: &[f32]) -> Result<Posterior> {
        if x.len() != self.feature_dim {
            return Err(ForestError::InputWidth {
                expected: self.feature_dim,
                got: x.len(),
            });
        }
        let mut mean = [0.0; NUM_CLASSES];
        for t in &self.trees {
            for (m, p) in mean.iter_mut().zip(t.leaf(x)) {
                *m += p;
            }
        }
        let n = self.trees.len() as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        Ok(mean)
    }

    /// Class with the highest mean posterior (lowest index on ties).
    pub fn predict(&self, x: &[f32]) -> Result<(usize, Posterior)> {
        let p = self.posterior(x)?;
        Ok((argmax(&p), p))
    }

    pub fn predict_batch(&self, features: &FeatureMatrix) -> Result<Vec<(usize, Posterior)>> {
        (0..features.rows())
            .into_par_iter()
            .map(|i| self.predict(features.row(i)))
            .collect()
    }
}

/// Trains `n_trees` trees, each on its own bootstrap sample and with its
/// own generator seeded from `(config.seed, tree index)`, so the result does
/// not depend on how rayon schedules the trees.
pub fn train_forest(features: &FeatureMatrix, labels: &[usize], config: &ForestConfig) -> Result<RandomForest> {
    config.validate()?;
    if features.rows() == 0 {
        return Err(ForestError::EmptySet);
    }
    tree::check_inputs(features, labels)?;
    let n = features.rows();
    let trees = (0..config.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = Rng::new(derive_seed(config.seed, t as u64));
            let sample: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            grow_tree(features, labels, &sample, config, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RandomForest {
        feature_dim: features.width(),
        trees,
    })
}
