use super::split::{best_threshold, entropy, sample_candidate_test, SplitTest};
use super::{ClassCounts, ForestConfig, ForestError, Result};
use crate::features::FeatureMatrix;
use crate::rng::Rng;
use crate::NUM_CLASSES;

pub type Posterior = [f64; NUM_CLASSES];

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Split { test: SplitTest, left: u32, right: u32 },
    Leaf { posterior: Posterior },
}

/// Binary tree stored as an arena; node 0 is the root.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionTree {
    nodes: Vec<Node>,
}

impl DecisionTree {
    /// Checks that every child index points forward in the arena (so the
    /// structure is a tree), tests are well formed and posteriors sum to one.
    pub fn from_nodes(nodes: Vec<Node>, feature_dim: usize) -> Result<Self> {
        if nodes.is_empty() {
            return Err(ForestError::Corrupt("tree has no nodes".into()));
        }
        let mut referenced = vec![false; nodes.len()];
        for (i, node) in nodes.iter().enumerate() {
            match node {
                Node::Split { test, left, right } => {
                    for &child in [left, right] {
                        let c = child as usize;
                        if c <= i || c >= nodes.len() || referenced[c] {
                            return Err(ForestError::Corrupt(format!("node {i} has bad child {c}")));
                        }
                        referenced[c] = true;
                    }
                    let p = &test.projection;
                    if p.feature_indices.is_empty() || p.feature_indices.len() != p.weights.len() {
                        return Err(ForestError::Corrupt(format!("node {i} has a malformed test")));
                    }
                    if p.max_index() >= feature_dim {
                        return Err(ForestError::Corrupt(format!(
                            "node {i} uses feature {} of {feature_dim}",
                            p.max_index()
                        )));
                    }
                }
                Node::Leaf { posterior } => {
                    let sum: f64 = posterior.iter().sum();
                    if posterior.iter().any(|&p| !(p >= 0.0)) || (sum - 1.0).abs() > 1e-6 {
                        return Err(ForestError::Corrupt(format!("node {i} posterior sums to {sum}")));
                    }
                }
            }
        }
        if referenced.iter().skip(1).any(|r| !r) {
            return Err(ForestError::Corrupt("unreachable nodes".into()));
        }
        Ok(DecisionTree { nodes })
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn leaf(&self, x: &[f32]) -> &Posterior {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Split { test, left, right } => {
                    i = if test.goes_left(x) { *left } else { *right } as usize;
                }
                Node::Leaf { posterior } => return posterior,
            }
        }
    }

    pub fn depth(&self) -> usize {
        let mut depth = vec![0usize; self.nodes.len()];
        for (i, node) in self.nodes.iter().enumerate() {
            if let Node::Split { left, right, .. } = node {
                depth[*left as usize] = depth[i] + 1;
                depth[*right as usize] = depth[i] + 1;
            }
        }
        depth.into_iter().max().unwrap_or(0)
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }
}

fn class_counts(labels: &[usize], idx: &[usize]) -> ClassCounts {
    let mut c = [0; NUM_CLASSES];
    for &i in idx {
        c[labels[i]] += 1;
    }
    c
}

fn leaf(counts: &ClassCounts) -> Node {
    let n: usize = counts.iter().sum();
    let mut posterior = [0.0; NUM_CLASSES];
    for (p, &c) in posterior.iter_mut().zip(counts) {
        *p = c as f64 / n as f64;
    }
    Node::Leaf { posterior }
}

struct Best {
    test: SplitTest,
    score: f64,
}

fn best_split(
    features: &FeatureMatrix,
    labels: &[usize],
    idx: &[usize],
    config: &ForestConfig,
    rng: &mut Rng,
) -> Result<Option<Best>> {
    let mut best: Option<Best> = None;
    let mut values = Vec::with_capacity(idx.len());
    for _ in 0..config.n_candidate_tests {
        let projection = sample_candidate_test(rng, features.width(), config.n_features_per_test)?;
        values.clear();
        values.extend(idx.iter().map(|&i| (projection.project(features.row(i)), labels[i] as u8)));
        let Some(fit) = best_threshold(&mut values, config.min_samples_leaf) else {
            continue;
        };
        if best.as_ref().is_none_or(|b| fit.score > b.score) {
            best = Some(Best {
                test: SplitTest {
                    projection,
                    threshold: fit.threshold,
                },
                score: fit.score,
            });
        }
    }
    Ok(best)
}

/// Grows one tree top-down on `sample_indices` (repeats allowed, as in a
/// bootstrap sample). Each node draws `n_candidate_tests` random linear
/// tests, fits the best threshold of each, and keeps the highest scoring.
/// A node becomes a leaf at `max_depth`, when pure, when no test gives both
/// children `min_samples_leaf` samples, or when the best test's information
/// gain is below `min_gain`.
pub fn grow_tree(
    features: &FeatureMatrix,
    labels: &[usize],
    sample_indices: &[usize],
    config: &ForestConfig,
    rng: &mut Rng,
) -> Result<DecisionTree> {
    if sample_indices.is_empty() {
        return Err(ForestError::EmptySet);
    }
    check_inputs(features, labels)?;
    if features.width() < config.n_features_per_test {
        return Err(ForestError::FeatureDim {
            feature_dim: features.width(),
            n_features_per_test: config.n_features_per_test,
        });
    }

    let mut nodes: Vec<Option<Node>> = vec![None];
    // (node slot, depth, samples); popped depth first, left child first
    let mut stack = vec![(0usize, 0usize, sample_indices.to_vec())];
    while let Some((slot, depth, idx)) = stack.pop() {
        let counts = class_counts(labels, &idx);
        let terminal = depth >= config.max_depth
            || counts.iter().filter(|&&c| c > 0).count() == 1
            || idx.len() < 2 * config.min_samples_leaf;
        let split = if terminal {
            None
        } else {
            let parent = entropy(&counts)?;
            best_split(features, labels, &idx, config, rng)?.filter(|b| parent + b.score >= config.min_gain)
        };
        let Some(Best { test, .. }) = split else {
            nodes[slot] = Some(leaf(&counts));
            continue;
        };
        let (left_idx, right_idx): (Vec<usize>, Vec<usize>) =
            idx.iter().partition(|&&i| test.goes_left(features.row(i)));
        let (left, right) = (nodes.len(), nodes.len() + 1);
        nodes.push(None);
        nodes.push(None);
        nodes[slot] = Some(Node::Split {
            test,
            left: left as u32,
            right: right as u32,
        });
        stack.push((right, depth + 1, right_idx));
        stack.push((left, depth + 1, left_idx));
    }
    Ok(DecisionTree {
        nodes: nodes.into_iter().map(|n| n.expect("every slot filled")).collect(),
    })
}

pub(super) fn check_inputs(features: &FeatureMatrix, labels: &[usize]) -> Result<()> {
    if labels.len() != features.rows() {
        return Err(ForestError::LabelCount {
            rows: features.rows(),
            labels: labels.len(),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= NUM_CLASSES) {
        return Err(ForestError::Label(bad));
    }
    if features.data().iter().any(|v| !v.is_finite()) {
        return Err(ForestError::NonFinite);
    }
    Ok(())
}
