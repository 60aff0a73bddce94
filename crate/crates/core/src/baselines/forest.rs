use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    /// Features tried per split; `None` means `round(sqrt(dim))`.
    pub max_features: Option<usize>,
    pub min_samples_split: usize,
    pub max_depth: Option<usize>,
    pub bootstrap: bool,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self { n_trees: 100, max_features: None, min_samples_split: 2, max_depth: None, bootstrap: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
enum Node {
    Leaf(f64),
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    nodes: Vec<Node>,
}

impl RegressionTree {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Leaf(v) => return *v,
                Node::Split { feature, threshold, left, right } => {
                    at = if row[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf(_))).count()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    pub cols: usize,
    pub trees: Vec<RegressionTree>,
}

struct Builder<'a> {
    x: &'a [f64],
    y: &'a [f64],
    cols: usize,
    max_features: usize,
    min_samples_split: usize,
    max_depth: usize,
    nodes: Vec<Node>,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    score: f64,
}

impl Builder<'_> {
    fn value(&self, row: usize, f: usize) -> f64 {
        self.x[row * self.cols + f]
    }

    /// Best variance-reduction split on one feature, scored by the summed
    /// squared error of both children.
    fn split_on(&self, idx: &mut [usize], f: usize) -> Option<BestSplit> {
        idx.sort_by(|&a, &b| self.value(a, f).total_cmp(&self.value(b, f)));
        let n = idx.len();
        let total: f64 = idx.iter().map(|&i| self.y[i]).sum();
        let total_sq: f64 = idx.iter().map(|&i| self.y[i] * self.y[i]).sum();
        let (mut ls, mut lsq) = (0.0, 0.0);
        let mut best: Option<BestSplit> = None;
        for p in 0..n - 1 {
            let yi = self.y[idx[p]];
            ls += yi;
            lsq += yi * yi;
            let (a, b) = (self.value(idx[p], f), self.value(idx[p + 1], f));
            if a == b {
                continue;
            }
            let nl = (p + 1) as f64;
            let nr = (n - p - 1) as f64;
            let rs = total - ls;
            let rsq = total_sq - lsq;
            let score = (lsq - ls * ls / nl) + (rsq - rs * rs / nr);
            if best.as_ref().is_none_or(|s| score < s.score) {
                best = Some(BestSplit { feature: f, threshold: 0.5 * (a + b), score });
            }
        }
        best
    }

    fn build(&mut self, idx: &mut [usize], depth: usize, rng: &mut ChaCha8Rng) -> usize {
        let n = idx.len();
        let mean = idx.iter().map(|&i| self.y[i]).sum::<f64>() / n as f64;
        let pure = idx.iter().all(|&i| self.y[i] == self.y[idx[0]]);
        let at = self.nodes.len();
        self.nodes.push(Node::Leaf(mean));
        if pure || n < self.min_samples_split || depth >= self.max_depth {
            return at;
        }
        let mut features: Vec<usize> = (0..self.cols).collect();
        features.shuffle(rng);
        // Like common CART implementations, keep drawing features past
        // `max_features` until at least one valid split is found.
        let mut best: Option<BestSplit> = None;
        for (tried, &f) in features.iter().enumerate() {
            if tried >= self.max_features && best.is_some() {
                break;
            }
            if let Some(s) = self.split_on(idx, f) {
                if best.as_ref().is_none_or(|b| s.score < b.score) {
                    best = Some(s);
                }
            }
        }
        let Some(split) = best else { return at };
        idx.sort_by(|&a, &b| self.value(a, split.feature).total_cmp(&self.value(b, split.feature)));
        let cut = idx.partition_point(|&i| self.value(i, split.feature) <= split.threshold);
        let (l, r) = idx.split_at_mut(cut);
        let left = self.build(l, depth + 1, rng);
        let right = self.build(r, depth + 1, rng);
        self.nodes[at] = Node::Split { feature: split.feature, threshold: split.threshold, left, right };
        at
    }
}

fn validate(x: &[f64], y: &[f64], cols: usize) -> Result<()> {
    if cols == 0 || x.len() != y.len() * cols {
        return Err(Error::DimensionMismatch(format!("{} values for {} rows of width {cols}", x.len(), y.len())));
    }
    if y.len() < 2 {
        return Err(Error::InvalidInput("a forest needs at least two rows".into()));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("forest input".into()));
    }
    Ok(())
}

/// Bagged CART regression trees on row-major `x`.
pub fn rf_fit(x: &[f64], y: &[f64], cols: usize, cfg: &ForestConfig, seed: u64) -> Result<RandomForest> {
    validate(x, y, cols)?;
    if cfg.n_trees == 0 {
        return Err(Error::InvalidInput("a forest needs at least one tree".into()));
    }
    let max_features =
        cfg.max_features.unwrap_or_else(|| ((cols as f64).sqrt().round() as usize).max(1)).clamp(1, cols);
    let n = y.len();
    let mut trees = Vec::with_capacity(cfg.n_trees);
    for t in 0..cfg.n_trees {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(t as u64);
        let mut idx: Vec<usize> =
            if cfg.bootstrap { (0..n).map(|_| rng.random_range(0..n)).collect() } else { (0..n).collect() };
        let mut b = Builder {
            x,
            y,
            cols,
            max_features,
            min_samples_split: cfg.min_samples_split.max(2),
            max_depth: cfg.max_depth.unwrap_or(usize::MAX),
            nodes: Vec::new(),
        };
        b.build(&mut idx, 0, &mut rng);
        trees.push(RegressionTree { nodes: b.nodes });
    }
    Ok(RandomForest { cols, trees })
}

/// Mean of the tree predictions per row.
pub fn rf_predict(forest: &RandomForest, x: &[f64]) -> Result<Vec<f64>> {
    if !x.len().is_multiple_of(forest.cols) {
        return Err(Error::DimensionMismatch(format!("{} values are not rows of width {}", x.len(), forest.cols)));
    }
    let m = forest.trees.len() as f64;
    Ok(x.chunks_exact(forest.cols).map(|r| forest.trees.iter().map(|t| t.predict_row(r)).sum::<f64>() / m).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(n: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..n * 3).map(|_| rng.random_range(0.0..1.0)).collect();
        let y = x.chunks(3).map(|r| r[0] * 4.0 + r[1] * r[2]).collect();
        (x, y)
    }

    #[test]
    fn constant_target_is_predicted_everywhere() {
        let (x, _) = toy(40, 1);
        let y = vec![2.5; 40];
        let f = rf_fit(&x, &y, 3, &ForestConfig { n_trees: 5, ..Default::default() }, 0).unwrap();
        assert!(rf_predict(&f, &[0.1, 0.9, 0.3]).unwrap().iter().all(|&p| p == 2.5));
    }

    #[test]
    fn single_unbagged_tree_memorizes() {
        let (x, y) = toy(60, 2);
        let cfg = ForestConfig { n_trees: 1, bootstrap: false, ..Default::default() };
        let f = rf_fit(&x, &y, 3, &cfg, 0).unwrap();
        assert_eq!(rf_predict(&f, &x).unwrap(), y);
    }

    #[test]
    fn same_seed_same_forest() {
        let (x, y) = toy(50, 3);
        let cfg = ForestConfig { n_trees: 4, ..Default::default() };
        assert_eq!(rf_fit(&x, &y, 3, &cfg, 9).unwrap(), rf_fit(&x, &y, 3, &cfg, 9).unwrap());
    }

    #[test]
    fn depth_limit_respected() {
        let (x, y) = toy(64, 4);
        let cfg = ForestConfig { n_trees: 1, bootstrap: false, max_depth: Some(2), ..Default::default() };
        let f = rf_fit(&x, &y, 3, &cfg, 0).unwrap();
        assert!(f.trees[0].n_leaves() <= 4);
    }
}
