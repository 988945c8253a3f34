//! Least-squares gradient boosting over depth-limited regression trees.
//!
//! The initial prediction is the training-target mean; every stage fits an
//! exact greedy SSE tree to the current residuals and is added with
//! shrinkage. Split search scans all midpoints between distinct feature
//! values; ties resolve to the lower feature index, then the lower threshold,
//! so training is fully deterministic for a fixed seed.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::featureset::FeatureDataset;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GbtConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub min_samples_leaf: usize,
    /// Fraction of rows drawn (without replacement) per stage.
    pub subsample_fraction: f64,
    pub seed: u64,
}

impl Default for GbtConfig {
    fn default() -> Self {
        GbtConfig {
            n_trees: 200,
            max_depth: 6,
            learning_rate: 0.1,
            min_samples_leaf: 5,
            subsample_fraction: 1.0,
            seed: 0,
        }
    }
}

impl GbtConfig {
    fn validate(&self) -> Result<(), ModelError> {
        if self.n_trees < 1 {
            return Err(ModelError::InvalidConfig("n_trees must be >= 1".into()));
        }
        if self.max_depth < 1 {
            return Err(ModelError::InvalidConfig("max_depth must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(ModelError::InvalidConfig(
                "learning_rate must be in (0, 1]".into(),
            ));
        }
        if self.min_samples_leaf < 1 {
            return Err(ModelError::InvalidConfig(
                "min_samples_leaf must be >= 1".into(),
            ));
        }
        if !(self.subsample_fraction > 0.0 && self.subsample_fraction <= 1.0) {
            return Err(ModelError::InvalidConfig(
                "subsample_fraction must be in (0, 1]".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "lowercase")]
pub enum TreeNode {
    Split {
        feature: usize,
        threshold: f64,
        left: u32,
        right: u32,
    },
    Leaf {
        value: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegTree {
    pub nodes: Vec<TreeNode>,
}

impl RegTree {
    pub fn predict(&self, row: &[f64]) -> f64 {
        let mut idx = 0usize;
        loop {
            match &self.nodes[idx] {
                TreeNode::Leaf { value } => return *value,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    idx = if row[*feature] <= *threshold {
                        *left as usize
                    } else {
                        *right as usize
                    };
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtModel {
    pub version: u32,
    pub config: GbtConfig,
    pub n_features: usize,
    /// Training-target mean; the stage-0 prediction.
    pub init: f64,
    pub trees: Vec<RegTree>,
    /// Training MSE after each boosting stage.
    pub loss_trace: Vec<f64>,
    /// Set when the target had zero variance and the model is the constant
    /// mean (a warning, not a failure).
    pub degenerate_target: bool,
}

impl GbtModel {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut pred = self.init;
        for tree in &self.trees {
            pred += self.config.learning_rate * tree.predict(row);
        }
        pred
    }

    pub fn predict_dataset(&self, data: &FeatureDataset) -> Result<Vec<f64>, ModelError> {
        if data.n_cols() != self.n_features {
            return Err(ModelError::ShapeMismatch {
                expected: format!("{} feature columns", self.n_features),
                got: format!("{}", data.n_cols()),
            });
        }
        Ok((0..data.n_rows())
            .map(|i| self.predict_row(data.row(i)))
            .collect())
    }
}

/// Best split of one node: SSE gain, feature index and threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
struct SplitCandidate {
    gain: f64,
    feature: usize,
    threshold: f64,
}

struct TreeBuilder<'a> {
    x: &'a [f64],
    n_cols: usize,
    targets: &'a [f64],
    max_depth: usize,
    min_samples_leaf: usize,
    nodes: Vec<TreeNode>,
}

impl<'a> TreeBuilder<'a> {
    fn row_value(&self, row: usize, feature: usize) -> f64 {
        self.x[row * self.n_cols + feature]
    }

    fn build(&mut self, indices: &mut [usize], depth: usize) -> u32 {
        let node_idx = self.nodes.len() as u32;
        let mean = indices.iter().map(|&i| self.targets[i]).sum::<f64>() / indices.len() as f64;
        let impure = indices
            .iter()
            .any(|&i| (self.targets[i] - mean).abs() > 0.0);
        let splittable = depth < self.max_depth
            && indices.len() >= 2 * self.min_samples_leaf
            && impure;
        let candidate = if splittable {
            self.best_split(indices)
        } else {
            None
        };
        match candidate {
            None => {
                self.nodes.push(TreeNode::Leaf { value: mean });
                node_idx
            }
            Some(split) => {
                self.nodes.push(TreeNode::Leaf { value: mean }); // placeholder
                let pivot = partition_indices(indices, |i| {
                    self.row_value(i, split.feature) <= split.threshold
                });
                let (left_slice, right_slice) = indices.split_at_mut(pivot);
                let left = self.build(left_slice, depth + 1);
                let right = self.build(right_slice, depth + 1);
                self.nodes[node_idx as usize] = TreeNode::Split {
                    feature: split.feature,
                    threshold: split.threshold,
                    left,
                    right,
                };
                node_idx
            }
        }
    }

    /// Exact greedy scan over all features and midpoints. A zero-gain split
    /// is still taken when the node is impure, so distinct rows always
    /// separate eventually (XOR-like targets need this).
    fn best_split(&self, indices: &[usize]) -> Option<SplitCandidate> {
        let n = indices.len();
        let total_sum: f64 = indices.iter().map(|&i| self.targets[i]).sum();
        let mut best: Option<SplitCandidate> = None;
        let mut sorted = indices.to_vec();
        for feature in 0..self.n_cols {
            sorted.sort_by(|&a, &b| self.row_value(a, feature).total_cmp(&self.row_value(b, feature)));
            let mut left_sum = 0.0;
            for k in 0..n - 1 {
                left_sum += self.targets[sorted[k]];
                let n_left = k + 1;
                let n_right = n - n_left;
                if n_left < self.min_samples_leaf || n_right < self.min_samples_leaf {
                    continue;
                }
                let v = self.row_value(sorted[k], feature);
                let v_next = self.row_value(sorted[k + 1], feature);
                if v_next <= v {
                    continue;
                }
                let right_sum = total_sum - left_sum;
                let gain = left_sum * left_sum / n_left as f64
                    + right_sum * right_sum / n_right as f64
                    - total_sum * total_sum / n as f64;
                let threshold = v + (v_next - v) / 2.0;
                let better = match &best {
                    None => true,
                    Some(b) => {
                        gain > b.gain
                            || (gain == b.gain
                                && (feature, threshold) < (b.feature, b.threshold))
                    }
                };
                if better {
                    best = Some(SplitCandidate {
                        gain,
                        feature,
                        threshold,
                    });
                }
            }
        }
        best
    }
}

/// Stable in-place partition; returns the pivot index.
fn partition_indices(indices: &mut [usize], pred: impl Fn(usize) -> bool) -> usize {
    let mut left: Vec<usize> = Vec::with_capacity(indices.len());
    let mut right: Vec<usize> = Vec::new();
    for &i in indices.iter() {
        if pred(i) {
            left.push(i);
        } else {
            right.push(i);
        }
    }
    let pivot = left.len();
    indices[..pivot].copy_from_slice(&left);
    indices[pivot..].copy_from_slice(&right);
    pivot
}

/// Fit one regression tree to `targets` restricted to `indices`.
fn fit_tree(
    x: &[f64],
    n_cols: usize,
    targets: &[f64],
    indices: &mut [usize],
    max_depth: usize,
    min_samples_leaf: usize,
) -> RegTree {
    let mut builder = TreeBuilder {
        x,
        n_cols,
        targets,
        max_depth,
        min_samples_leaf,
        nodes: Vec::new(),
    };
    builder.build(indices, 0);
    RegTree {
        nodes: builder.nodes,
    }
}

/// Train the boosted ensemble on a (scaled) feature dataset.
pub fn train_gbt(train: &FeatureDataset, cfg: &GbtConfig) -> Result<GbtModel, ModelError> {
    cfg.validate()?;
    let n = train.n_rows();
    if n < 2 * cfg.min_samples_leaf {
        return Err(ModelError::TooFewRows {
            n,
            min: 2 * cfg.min_samples_leaf,
        });
    }
    let y = &train.y;
    let init = y.iter().sum::<f64>() / n as f64;
    let variance = y.iter().map(|v| (v - init).powi(2)).sum::<f64>() / n as f64;
    if variance <= 0.0 {
        return Ok(GbtModel {
            version: 1,
            config: cfg.clone(),
            n_features: train.n_cols(),
            init,
            trees: Vec::new(),
            loss_trace: vec![0.0],
            degenerate_target: true,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut predictions = vec![init; n];
    let mut residuals = vec![0.0; n];
    let mut trees = Vec::with_capacity(cfg.n_trees);
    let mut loss_trace = Vec::with_capacity(cfg.n_trees);
    let sample_size = ((cfg.subsample_fraction * n as f64).floor() as usize).clamp(1, n);

    for _ in 0..cfg.n_trees {
        for i in 0..n {
            residuals[i] = y[i] - predictions[i];
        }
        let mut indices: Vec<usize> = if sample_size == n {
            (0..n).collect()
        } else {
            let mut pool: Vec<usize> = (0..n).collect();
            for i in 0..sample_size {
                let j = i + rng.gen_range(0..n - i);
                pool.swap(i, j);
            }
            pool.truncate(sample_size);
            pool.sort_unstable();
            pool
        };
        let tree = fit_tree(
            train.matrix(),
            train.n_cols(),
            &residuals,
            &mut indices,
            cfg.max_depth,
            cfg.min_samples_leaf,
        );
        for i in 0..n {
            predictions[i] += cfg.learning_rate * tree.predict(train.row(i));
        }
        trees.push(tree);
        let mse = y
            .iter()
            .zip(&predictions)
            .map(|(a, p)| (a - p).powi(2))
            .sum::<f64>()
            / n as f64;
        loss_trace.push(mse);
    }

    Ok(GbtModel {
        version: 1,
        config: cfg.clone(),
        n_features: train.n_cols(),
        init,
        trees,
        loss_trace,
        degenerate_target: false,
    })
}
