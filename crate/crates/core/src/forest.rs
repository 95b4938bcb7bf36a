//! Random-forest regressor built from scratch.
//!
//! Trees are fit on seeded bootstrap samples; splits maximize the decrease in
//! within-node variance (sum of squared deviations) over a random feature
//! subset, with candidate thresholds at midpoints between consecutive sorted
//! unique values. Feature importance sums the impurity decrease a feature
//! causes across all split nodes of all trees.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

const SEED_STRIDE: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Debug, Error)]
pub enum ForestError {
    #[error("x has {x} rows but y has {y} values")]
    LengthMismatch { x: usize, y: usize },
    #[error("need at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("input has {got} features, forest was trained on {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("inconsistent feature count at row {0}")]
    RaggedRows(usize),
}

/// How many features each split considers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureSubset {
    All,
    Count(usize),
    Fraction(f64),
}

impl FeatureSubset {
    fn resolve(self, p: usize) -> usize {
        match self {
            FeatureSubset::All => p,
            FeatureSubset::Count(c) => c.clamp(1, p),
            FeatureSubset::Fraction(f) => ((p as f64 * f).ceil() as usize).clamp(1, p),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: Option<usize>,
    pub min_leaf: usize,
    /// `None` uses the regression convention ceil(p / 3).
    pub features_per_split: Option<FeatureSubset>,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 200,
            max_depth: None,
            min_leaf: 2,
            features_per_split: None,
            bootstrap: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TreeNode {
    Split {
        feature: usize,
        threshold: f64,
        impurity_decrease: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
    Leaf {
        value: f64,
        count: usize,
    },
}

impl TreeNode {
    fn predict(&self, x: &[f64]) -> f64 {
        match self {
            TreeNode::Leaf { value, .. } => *value,
            TreeNode::Split {
                feature,
                threshold,
                left,
                right,
                ..
            } => {
                if x[*feature] <= *threshold {
                    left.predict(x)
                } else {
                    right.predict(x)
                }
            }
        }
    }

    fn accumulate_importance(&self, acc: &mut [f64]) {
        if let TreeNode::Split {
            feature,
            impurity_decrease,
            left,
            right,
            ..
        } = self
        {
            acc[*feature] += impurity_decrease;
            left.accumulate_importance(acc);
            right.accumulate_importance(acc);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub trees: Vec<TreeNode>,
    pub n_features: usize,
    pub params: ForestParams,
    pub notes: Vec<String>,
}

/// Bootstrap index multiset: `n` draws with replacement, seeded.
pub fn bootstrap_indices(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    (0..n).map(|_| rng.gen_range(0..n)).collect()
}

struct TreeFitter<'a> {
    x: &'a [Vec<f64>],
    y: &'a [f64],
    m_try: usize,
    params: &'a ForestParams,
}

impl TreeFitter<'_> {
    fn fit(&self, indices: Vec<usize>, rng: &mut ChaCha8Rng) -> TreeNode {
        self.build(indices, 0, rng)
    }

    fn leaf(&self, indices: &[usize]) -> TreeNode {
        let mean = indices.iter().map(|&i| self.y[i]).sum::<f64>() / indices.len() as f64;
        TreeNode::Leaf {
            value: mean,
            count: indices.len(),
        }
    }

    fn build(&self, indices: Vec<usize>, depth: usize, rng: &mut ChaCha8Rng) -> TreeNode {
        let n = indices.len();
        if n < 2 * self.params.min_leaf || self.params.max_depth.is_some_and(|d| depth >= d) {
            return self.leaf(&indices);
        }
        let first = self.y[indices[0]];
        if indices.iter().all(|&i| self.y[i] == first) {
            return self.leaf(&indices);
        }

        let p = self.x[0].len();
        let mut candidates: Vec<usize> = (0..p).collect();
        // Partial Fisher-Yates, then sorted for a deterministic scan order.
        for i in 0..self.m_try.min(p) {
            let j = rng.gen_range(i..p);
            candidates.swap(i, j);
        }
        candidates.truncate(self.m_try.min(p));
        candidates.sort_unstable();

        let total_sse = sse(self.y, &indices);
        let mut best: Option<(usize, f64, f64)> = None; // (feature, threshold, gain)
        let mut pairs: Vec<(f64, f64)> = Vec::with_capacity(n);
        for &f in &candidates {
            pairs.clear();
            pairs.extend(indices.iter().map(|&i| (self.x[i][f], self.y[i])));
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0));

            let mut left_sum = 0.0;
            let mut left_sq = 0.0;
            let total_sum: f64 = pairs.iter().map(|(_, y)| y).sum();
            let total_sq: f64 = pairs.iter().map(|(_, y)| y * y).sum();
            for i in 1..n {
                left_sum += pairs[i - 1].1;
                left_sq += pairs[i - 1].1 * pairs[i - 1].1;
                if pairs[i - 1].0 == pairs[i].0 {
                    continue;
                }
                if i < self.params.min_leaf || n - i < self.params.min_leaf {
                    continue;
                }
                let right_sum = total_sum - left_sum;
                let right_sq = total_sq - left_sq;
                let sse_left = left_sq - left_sum * left_sum / i as f64;
                let sse_right = right_sq - right_sum * right_sum / (n - i) as f64;
                let gain = total_sse - sse_left - sse_right;
                if gain > best.map_or(0.0, |(_, _, g)| g) {
                    let threshold = 0.5 * (pairs[i - 1].0 + pairs[i].0);
                    best = Some((f, threshold, gain));
                }
            }
        }

        let Some((feature, threshold, gain)) = best else {
            return self.leaf(&indices);
        };
        let (left_idx, right_idx): (Vec<usize>, Vec<usize>) = indices
            .into_iter()
            .partition(|&i| self.x[i][feature] <= threshold);
        if left_idx.is_empty() || right_idx.is_empty() {
            // Midpoint collapsed onto a sample value; treat as unsplittable.
            let merged: Vec<usize> = left_idx.into_iter().chain(right_idx).collect();
            return self.leaf(&merged);
        }
        TreeNode::Split {
            feature,
            threshold,
            impurity_decrease: gain,
            left: Box::new(self.build(left_idx, depth + 1, rng)),
            right: Box::new(self.build(right_idx, depth + 1, rng)),
        }
    }
}

fn sse(y: &[f64], indices: &[usize]) -> f64 {
    let n = indices.len() as f64;
    let sum: f64 = indices.iter().map(|&i| y[i]).sum();
    let sq: f64 = indices.iter().map(|&i| y[i] * y[i]).sum();
    sq - sum * sum / n
}

/// Fit an ensemble of regression trees on seeded bootstrap samples.
pub fn fit_forest(x: &[Vec<f64>], y: &[f64], params: &ForestParams) -> Result<Forest, ForestError> {
    if x.len() != y.len() {
        return Err(ForestError::LengthMismatch { x: x.len(), y: y.len() });
    }
    if x.len() < 2 {
        return Err(ForestError::TooFewSamples(x.len()));
    }
    let p = x[0].len();
    if let Some(row) = x.iter().position(|r| r.len() != p) {
        return Err(ForestError::RaggedRows(row));
    }

    let mut notes = Vec::new();
    if y.iter().all(|&v| v == y[0]) {
        notes.push("zero-variance target: trees degenerate to single leaves".into());
    }
    let m_try = params
        .features_per_split
        .unwrap_or(FeatureSubset::Count(p.div_ceil(3)))
        .resolve(p.max(1));

    let fitter = TreeFitter {
        x,
        y,
        m_try,
        params,
    };
    let trees: Vec<TreeNode> = (0..params.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(
                params.seed.wrapping_add((t as u64).wrapping_mul(SEED_STRIDE)),
            );
            let indices = if params.bootstrap {
                bootstrap_indices(x.len(), &mut rng)
            } else {
                (0..x.len()).collect()
            };
            fitter.fit(indices, &mut rng)
        })
        .collect();

    Ok(Forest {
        trees,
        n_features: p,
        params: *params,
        notes,
    })
}

/// Mean of per-tree leaf values.
pub fn predict(forest: &Forest, x: &[f64]) -> Result<f64, ForestError> {
    if x.len() != forest.n_features {
        return Err(ForestError::DimensionMismatch {
            expected: forest.n_features,
            got: x.len(),
        });
    }
    let sum: f64 = forest.trees.iter().map(|t| t.predict(x)).sum();
    Ok(sum / forest.trees.len() as f64)
}

/// Summed impurity decrease per feature before normalization.
pub fn raw_importance(forest: &Forest) -> Vec<f64> {
    let mut acc = vec![0.0; forest.n_features];
    for tree in &forest.trees {
        tree.accumulate_importance(&mut acc);
    }
    acc
}

/// Per-feature importance normalized to sum to 1 (zero vector if no splits).
pub fn importance(forest: &Forest) -> Vec<f64> {
    let mut acc = raw_importance(forest);
    let total: f64 = acc.iter().sum();
    if total > 0.0 {
        for v in &mut acc {
            *v /= total;
        }
    }
    acc
}
