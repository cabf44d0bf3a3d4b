//! Random forest of Gini-split axis-aligned trees.
//!
//! Training sorts the samples into a canonical order first, and draws each
//! tree's bootstrap from a stream keyed by (seed, tree, sample count), so the
//! model depends on the sample multiset and not on its order.

use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
#[allow(unused_imports)]
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{config, Error, Result};
use crate::rng::{derive_seed, stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForestConfig {
    pub trees: usize,
    pub max_depth: usize,
    pub seed: u64,
    pub bootstrap: bool,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self { trees: 50, max_depth: 8, seed: 0, bootstrap: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Leaf { class: usize },
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

/// Nodes in preorder; node 0 is the root. `x[feature] <= threshold` goes left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, x: &[f64]) -> usize {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { class } => return *class,
                Node::Split { feature, threshold, left, right } => {
                    i = if x[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    pub n_features: usize,
    pub n_classes: usize,
    pub trees: Vec<Tree>,
}

fn gini(counts: &[usize], total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let t = total as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / t).powi(2)).sum::<f64>()
}

fn majority(counts: &[usize]) -> usize {
    let mut best = 0;
    for (i, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = i;
        }
    }
    best
}

struct Builder<'a> {
    x: &'a [Vec<f64>],
    y: &'a [usize],
    n_classes: usize,
    max_depth: usize,
    mtry: usize,
    nodes: Vec<Node>,
}

impl Builder<'_> {
    fn build(&mut self, idx: &[usize], depth: usize, rng: &mut impl Rng) -> usize {
        let mut counts = alloc::vec![0usize; self.n_classes];
        for &i in idx {
            counts[self.y[i]] += 1;
        }
        let me = self.nodes.len();
        self.nodes.push(Node::Leaf { class: majority(&counts) });
        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        if pure || depth >= self.max_depth || idx.len() < 2 {
            return me;
        }
        let d = self.x[0].len();
        let mut features: Vec<usize> = (0..d).collect();
        features.shuffle(rng);
        features.truncate(self.mtry);
        let parent = gini(&counts, idx.len());
        let mut best: Option<(f64, usize, f64)> = None;
        for &f in &features {
            let mut order: Vec<usize> = idx.to_vec();
            order.sort_by(|&a, &b| self.x[a][f].total_cmp(&self.x[b][f]));
            let mut left = alloc::vec![0usize; self.n_classes];
            for k in 0..order.len() - 1 {
                left[self.y[order[k]]] += 1;
                let (v, next) = (self.x[order[k]][f], self.x[order[k + 1]][f]);
                if v == next {
                    continue;
                }
                let nl = k + 1;
                let nr = order.len() - nl;
                let right: Vec<usize> = counts.iter().zip(&left).map(|(c, l)| c - l).collect();
                let score = (nl as f64 * gini(&left, nl) + nr as f64 * gini(&right, nr)) / order.len() as f64;
                if best.map_or(true, |(s, _, _)| score < s) {
                    best = Some((score, f, v + (next - v) / 2.0));
                }
            }
        }
        let Some((score, feature, threshold)) = best else { return me };
        if score >= parent {
            return me;
        }
        let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| self.x[i][feature] <= threshold);
        let left = self.build(&l, depth + 1, rng);
        let right = self.build(&r, depth + 1, rng);
        self.nodes[me] = Node::Split { feature, threshold, left, right };
        me
    }
}

fn canonical_order(x: &[Vec<f64>], y: &[usize]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| {
        x[a].iter()
            .zip(&x[b])
            .map(|(p, q)| p.total_cmp(q))
            .find(|o| o.is_ne())
            .unwrap_or(core::cmp::Ordering::Equal)
            .then(y[a].cmp(&y[b]))
    });
    idx
}

/// Trains a forest with `√d` candidate features per split.
pub fn rf_train(x: &[Vec<f64>], y: &[usize], n_classes: usize, cfg: &ForestConfig) -> Result<RandomForest> {
    if x.is_empty() {
        return Err(Error::Data("random forest needs at least one sample".into()));
    }
    if x.len() != y.len() {
        return Err(Error::Dimension { op: "rf_train", axis: "samples", expected: x.len(), found: y.len() });
    }
    if cfg.trees == 0 {
        return Err(config("random forest needs at least one tree"));
    }
    let d = x[0].len();
    if d == 0 || x.iter().any(|r| r.len() != d || r.iter().any(|v| !v.is_finite())) {
        return Err(Error::Data("feature rows must be non-empty, equally long and finite".into()));
    }
    if let Some(&c) = y.iter().find(|&&c| c >= n_classes) {
        return Err(Error::Data(format!("label {c} outside {n_classes} classes")));
    }
    let order = canonical_order(x, y);
    let xs: Vec<Vec<f64>> = order.iter().map(|&i| x[i].clone()).collect();
    let ys: Vec<usize> = order.iter().map(|&i| y[i]).collect();
    let n = xs.len();
    let mtry = ((d as f64).sqrt().floor() as usize).max(1);
    let mut trees = Vec::with_capacity(cfg.trees);
    for t in 0..cfg.trees {
        let mut rng = stream(derive_seed(cfg.seed, &[t as u64, n as u64]), 0);
        let idx: Vec<usize> = if cfg.bootstrap { (0..n).map(|_| rng.gen_range(0..n)).collect() } else { (0..n).collect() };
        let mut b = Builder { x: &xs, y: &ys, n_classes, max_depth: cfg.max_depth, mtry, nodes: Vec::new() };
        b.build(&idx, 0, &mut rng);
        trees.push(Tree { nodes: b.nodes });
    }
    Ok(RandomForest { n_features: d, n_classes, trees })
}

impl RandomForest {
    /// Majority vote; ties go to the lowest class.
    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        if self.trees.is_empty() {
            return Err(config("random forest has no trees"));
        }
        if x.len() != self.n_features {
            return Err(Error::Dimension { op: "rf_predict", axis: "features", expected: self.n_features, found: x.len() });
        }
        let mut votes = alloc::vec![0usize; self.n_classes];
        for t in &self.trees {
            votes[t.predict(x)] += 1;
        }
        Ok(majority(&votes))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separable_one_feature() {
        let x: Vec<Vec<f64>> = (0..20).map(|i| alloc::vec![i as f64]).collect();
        let y: Vec<usize> = (0..20).map(|i| (i >= 10) as usize).collect();
        let cfg = ForestConfig { trees: 1, max_depth: 1, seed: 3, bootstrap: false };
        let f = rf_train(&x, &y, 2, &cfg).unwrap();
        for (xi, &yi) in x.iter().zip(&y) {
            assert_eq!(f.predict(xi).unwrap(), yi);
        }
        assert_eq!(f.trees[0].nodes[0], Node::Split { feature: 0, threshold: 9.5, left: 1, right: 2 });
    }

    #[test]
    fn single_tree_forest_is_the_tree() {
        let x: Vec<Vec<f64>> = (0..30).map(|i| alloc::vec![(i * 7 % 11) as f64, (i % 3) as f64]).collect();
        let y: Vec<usize> = (0..30).map(|i| (i * 7 % 11 > 5) as usize + (i % 3 == 0) as usize).collect();
        let f = rf_train(&x, &y, 3, &ForestConfig { trees: 1, ..ForestConfig::default() }).unwrap();
        for xi in &x {
            assert_eq!(f.predict(xi).unwrap(), f.trees[0].predict(xi));
        }
    }

    #[test]
    fn errors() {
        assert!(rf_train(&[], &[], 2, &ForestConfig::default()).is_err());
        let empty = RandomForest { n_features: 1, n_classes: 2, trees: Vec::new() };
        assert!(matches!(empty.predict(&[0.0]), Err(Error::Config(_))));
    }
}
