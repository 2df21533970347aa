//! Regression trees and additive ensembles of them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::sigmoid;

/// Flat binary tree. Internal nodes send `x[f] ≤ threshold` (false for NaN)
/// left. `value` holds the leaf's margin contribution, already shrunk by
/// the learning rate; `cover` is the number of training rows reaching the node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub split_feature: Vec<i32>,
    pub threshold: Vec<f64>,
    pub left: Vec<u32>,
    pub right: Vec<u32>,
    pub value: Vec<f64>,
    pub cover: Vec<f64>,
}

impl Tree {
    pub fn leaf(value: f64, cover: f64) -> Self {
        Tree {
            split_feature: vec![-1],
            threshold: vec![0.0],
            left: vec![0],
            right: vec![0],
            value: vec![value],
            cover: vec![cover],
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.split_feature.len()
    }

    pub fn is_leaf(&self, node: usize) -> bool {
        self.split_feature[node] < 0
    }

    pub fn n_leaves(&self) -> usize {
        (0..self.n_nodes()).filter(|n| self.is_leaf(*n)).count()
    }

    pub fn leaf_index(&self, row: &[f64]) -> usize {
        let mut n = 0;
        while !self.is_leaf(n) {
            let f = self.split_feature[n] as usize;
            n = if row[f] <= self.threshold[n] { self.left[n] } else { self.right[n] } as usize;
        }
        n
    }

    pub fn predict(&self, row: &[f64]) -> f64 {
        self.value[self.leaf_index(row)]
    }

    pub fn depth(&self) -> usize {
        fn go(t: &Tree, n: usize) -> usize {
            if t.is_leaf(n) {
                0
            } else {
                1 + go(t, t.left[n] as usize).max(go(t, t.right[n] as usize))
            }
        }
        go(self, 0)
    }

    /// Cover-weighted mean leaf value.
    pub fn expected_value(&self) -> f64 {
        fn go(t: &Tree, n: usize) -> f64 {
            if t.is_leaf(n) {
                return t.value[n];
            }
            let (l, r) = (t.left[n] as usize, t.right[n] as usize);
            (t.cover[l] * go(t, l) + t.cover[r] * go(t, r)) / t.cover[n]
        }
        go(self, 0)
    }

    /// Structural checks: consistent array lengths, children after parents,
    /// positive covers, finite values, features within `n_features`.
    pub fn validate(&self, n_features: usize) -> Result<()> {
        let n = self.n_nodes();
        let bad = |m: String| Err(Error::validation("tree", m));
        if n == 0
            || [self.threshold.len(), self.left.len(), self.right.len(), self.value.len(), self.cover.len()]
                .iter()
                .any(|l| *l != n)
        {
            return bad("node arrays differ in length".into());
        }
        for i in 0..n {
            if !self.value[i].is_finite() || !(self.cover[i] > 0.0) {
                return bad(format!("node {i} has a non-finite value or non-positive cover"));
            }
            if self.is_leaf(i) {
                continue;
            }
            let (l, r) = (self.left[i] as usize, self.right[i] as usize);
            if self.split_feature[i] as usize >= n_features {
                return bad(format!("node {i} splits on unknown feature"));
            }
            if l <= i || r <= i || l >= n || r >= n || l == r || self.threshold[i].is_nan() {
                return bad(format!("node {i} has invalid children"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainMeta {
    pub rounds_trained: usize,
    /// Trees kept after early-stopping rollback.
    pub best_rounds: usize,
    /// Training loss before the first tree and after each round.
    pub train_loss: Vec<f64>,
    pub valid_auprc: Vec<f64>,
    pub positive_weight: f64,
    /// Set when training labels had a single class.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeEnsemble {
    pub base_score: f64,
    pub learning_rate: f64,
    pub trees: Vec<Tree>,
    pub meta: TrainMeta,
}

impl TreeEnsemble {
    pub fn margin(&self, row: &[f64]) -> f64 {
        self.base_score + self.trees.iter().map(|t| t.predict(row)).sum::<f64>()
    }

    pub fn score(&self, row: &[f64]) -> f64 {
        sigmoid(self.margin(row))
    }

    pub fn validate(&self, n_features: usize) -> Result<()> {
        if !self.base_score.is_finite() {
            return Err(Error::validation("ensemble", "non-finite base score"));
        }
        self.trees.iter().try_for_each(|t| t.validate(n_features))
    }
}

#[cfg(test)]
pub(crate) fn stump(feature: i32, threshold: f64, lo: f64, hi: f64) -> Tree {
    Tree {
        split_feature: vec![feature, -1, -1],
        threshold: vec![threshold, 0.0, 0.0],
        left: vec![1, 0, 0],
        right: vec![2, 0, 0],
        value: vec![0.0, lo, hi],
        cover: vec![10.0, 4.0, 6.0],
    }
}
