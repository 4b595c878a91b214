//! CART regression trees grown on variance reduction, bagged into a forest.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RandomForestConfig {
    pub n_trees: usize,
    /// `None` grows until leaves are pure or too small to split.
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    /// Features tried per split; `None` means `ceil(d / 3)`.
    pub features_per_split: Option<usize>,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for RandomForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: None,
            min_samples_leaf: 2,
            features_per_split: None,
            bootstrap: true,
            seed: 0,
        }
    }
}

impl RandomForestConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::Config("n_trees must be at least 1".into()));
        }
        if self.min_samples_leaf == 0 {
            return Err(Error::Config("min_samples_leaf must be at least 1".into()));
        }
        if self.features_per_split == Some(0) {
            return Err(Error::Config("features_per_split must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum Node {
    Leaf(f64),
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    nodes: Vec<Node>,
}

impl RegressionTree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut k = 0;
        loop {
            match self.nodes[k] {
                Node::Leaf(v) => return v,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => k = if x[feature] <= threshold { left } else { right },
            }
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf(_))).count()
    }
}

struct Grower<'a> {
    x: &'a [Vec<f64>],
    y: &'a [f64],
    cfg: &'a RandomForestConfig,
    mtry: usize,
    rng: ChaCha8Rng,
    nodes: Vec<Node>,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    sse: f64,
    n_left: usize,
}

impl Grower<'_> {
    fn grow(&mut self, mut idx: Vec<usize>, depth: usize) -> usize {
        let slot = self.nodes.len();
        let n = idx.len() as f64;
        let mean = idx.iter().map(|&i| self.y[i]).sum::<f64>() / n;
        self.nodes.push(Node::Leaf(mean));

        let pure = idx.iter().all(|&i| self.y[i] == self.y[idx[0]]);
        let too_deep = self.cfg.max_depth.is_some_and(|d| depth >= d);
        if pure || too_deep || idx.len() < 2 * self.cfg.min_samples_leaf {
            return slot;
        }
        let Some(split) = self.best_split(&mut idx) else {
            return slot;
        };
        idx.sort_by(|&a, &b| self.x[a][split.feature].total_cmp(&self.x[b][split.feature]));
        let right_idx = idx.split_off(split.n_left);
        let left = self.grow(idx, depth + 1);
        let right = self.grow(right_idx, depth + 1);
        self.nodes[slot] = Node::Split {
            feature: split.feature,
            threshold: split.threshold,
            left,
            right,
        };
        slot
    }

    /// Scans a random feature order; after the first `mtry` features it
    /// stops at the first one that admits any valid split.
    fn best_split(&mut self, idx: &mut [usize]) -> Option<BestSplit> {
        let d = self.x[0].len();
        let mut features: Vec<usize> = (0..d).collect();
        features.shuffle(&mut self.rng);
        let min_leaf = self.cfg.min_samples_leaf;
        let n = idx.len();
        let total: f64 = idx.iter().map(|&i| self.y[i]).sum();
        let total_sq: f64 = idx.iter().map(|&i| self.y[i] * self.y[i]).sum();
        let mut best: Option<BestSplit> = None;

        for (tried, &f) in features.iter().enumerate() {
            if tried >= self.mtry && best.is_some() {
                break;
            }
            idx.sort_by(|&a, &b| self.x[a][f].total_cmp(&self.x[b][f]));
            let (mut sum_l, mut sq_l) = (0.0, 0.0);
            for k in 0..n - 1 {
                let yk = self.y[idx[k]];
                sum_l += yk;
                sq_l += yk * yk;
                let n_left = k + 1;
                let (xa, xb) = (self.x[idx[k]][f], self.x[idx[k + 1]][f]);
                if n_left < min_leaf || n - n_left < min_leaf || xa == xb {
                    continue;
                }
                let (nl, nr) = (n_left as f64, (n - n_left) as f64);
                let sum_r = total - sum_l;
                let sse = (sq_l - sum_l * sum_l / nl) + ((total_sq - sq_l) - sum_r * sum_r / nr);
                if best.as_ref().is_none_or(|b| sse < b.sse) {
                    let mut threshold = 0.5 * (xa + xb);
                    if threshold >= xb {
                        threshold = xa;
                    }
                    best = Some(BestSplit {
                        feature: f,
                        threshold,
                        sse,
                        n_left,
                    });
                }
            }
        }
        best
    }
}

fn grow_tree(
    x: &[Vec<f64>],
    y: &[f64],
    idx: Vec<usize>,
    cfg: &RandomForestConfig,
    rng: ChaCha8Rng,
) -> RegressionTree {
    let d = x[0].len();
    let mtry = cfg.features_per_split.unwrap_or(d.div_ceil(3)).clamp(1, d);
    let mut g = Grower {
        x,
        y,
        cfg,
        mtry,
        rng,
        nodes: Vec::new(),
    };
    g.grow(idx, 0);
    RegressionTree { nodes: g.nodes }
}

/// Bagged regression trees; the prediction is the mean over trees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    trees: Vec<RegressionTree>,
}

impl RandomForest {
    pub fn fit(x: &[Vec<f64>], y: &[f64], cfg: &RandomForestConfig) -> Result<Self> {
        cfg.validate()?;
        if x.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if x.len() != y.len() {
            return Err(Error::Dimension(format!(
                "{} inputs but {} targets",
                x.len(),
                y.len()
            )));
        }
        let n = x.len();
        let trees = (0..cfg.n_trees)
            .map(|t| {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(t as u64));
                let idx = if cfg.bootstrap {
                    (0..n).map(|_| rng.random_range(0..n)).collect()
                } else {
                    (0..n).collect()
                };
                grow_tree(x, y, idx, cfg, rng)
            })
            .collect();
        Ok(Self { trees })
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict(x)).sum::<f64>() / self.trees.len() as f64
    }

    pub fn trees(&self) -> &[RegressionTree] {
        &self.trees
    }
}
