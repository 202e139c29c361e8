//! Least-squares gradient boosting over depth-limited regression trees.
//!
//! Two tree builders are available: greedy depth-wise trees and oblivious
//! (symmetric) trees that share one split per level. Split search may use a
//! seeded row/column subsample, but leaf values are always the mean residual
//! of *all* training rows reaching the leaf, which keeps the training error
//! non-increasing from round to round.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_regression_data, Predictor};
use crate::error::{Error, Result};
use crate::evaluation::rmse;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TreeKind {
    Greedy,
    Oblivious,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GbrtConfig {
    pub rounds: usize,
    pub max_depth: usize,
    pub shrinkage: f64,
    pub min_samples_leaf: usize,
    /// Fraction of rows used for split search each round.
    pub subsample: f64,
    /// Fraction of features considered each round.
    pub colsample: f64,
    pub tree: TreeKind,
    pub seed: u64,
}

impl Default for GbrtConfig {
    fn default() -> Self {
        GbrtConfig {
            rounds: 100,
            max_depth: 3,
            shrinkage: 0.1,
            min_samples_leaf: 1,
            subsample: 1.0,
            colsample: 1.0,
            tree: TreeKind::Greedy,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Tree {
    Greedy { nodes: Vec<Node> },
    /// One `(feature, threshold)` per level; leaf index bit `l` is set when
    /// the sample goes right at level `l`.
    Oblivious { levels: Vec<(usize, f64)>, leaves: Vec<f64> },
}

impl Tree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        match self {
            Tree::Greedy { nodes } => {
                let mut i = 0;
                loop {
                    match &nodes[i] {
                        Node::Leaf(v) => return *v,
                        Node::Split {
                            feature,
                            threshold,
                            left,
                            right,
                        } => i = if x[*feature] <= *threshold { *left } else { *right },
                    }
                }
            }
            Tree::Oblivious { levels, leaves } => leaves[oblivious_leaf(levels, x)],
        }
    }
}

fn oblivious_leaf(levels: &[(usize, f64)], x: &[f64]) -> usize {
    levels
        .iter()
        .enumerate()
        .fold(0, |acc, (l, &(f, t))| if x[f] > t { acc | (1 << l) } else { acc })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gbrt {
    pub base_score: f64,
    pub shrinkage: f64,
    pub trees: Vec<Tree>,
    /// Training RMSE after 0, 1, ..., rounds trees.
    pub train_rmse: Vec<f64>,
    pub config: GbrtConfig,
}

impl Predictor for Gbrt {
    fn predict(&self, x: &[f64]) -> f64 {
        self.base_score + self.shrinkage * self.trees.iter().map(|t| t.predict(x)).sum::<f64>()
    }
}

/// Best split of `rows` on `features`, as (gain, feature, threshold).
fn best_split(
    xs: &[Vec<f64>],
    resid: &[f64],
    rows: &[usize],
    features: &[usize],
    min_leaf: usize,
) -> Option<(f64, usize, f64)> {
    let n = rows.len();
    if n < 2 * min_leaf.max(1) {
        return None;
    }
    let total: f64 = rows.iter().map(|&i| resid[i]).sum();
    let base = total * total / n as f64;
    let mut best: Option<(f64, usize, f64)> = None;
    let mut sorted = rows.to_vec();
    for &f in features {
        sorted.sort_by(|&a, &b| xs[a][f].total_cmp(&xs[b][f]).then(a.cmp(&b)));
        let mut left = 0.0;
        for k in 0..n - 1 {
            left += resid[sorted[k]];
            let (lo, hi) = (xs[sorted[k]][f], xs[sorted[k + 1]][f]);
            let n_left = k + 1;
            if lo == hi || n_left < min_leaf || n - n_left < min_leaf {
                continue;
            }
            let right = total - left;
            let gain = left * left / n_left as f64 + right * right / (n - n_left) as f64 - base;
            if gain > 1e-12 && best.is_none_or(|(g, _, _)| gain > g) {
                best = Some((gain, f, lo + (hi - lo) / 2.0));
            }
        }
    }
    best
}

fn mean_of(resid: &[f64], rows: &[usize]) -> f64 {
    if rows.is_empty() {
        0.0
    } else {
        rows.iter().map(|&i| resid[i]).sum::<f64>() / rows.len() as f64
    }
}

#[allow(clippy::too_many_arguments)]
fn grow_greedy(
    xs: &[Vec<f64>],
    resid: &[f64],
    search: &[usize],
    all: &[usize],
    features: &[usize],
    depth: usize,
    cfg: &GbrtConfig,
    nodes: &mut Vec<Node>,
) -> usize {
    let id = nodes.len();
    nodes.push(Node::Leaf(mean_of(resid, all)));
    if depth == 0 {
        return id;
    }
    let Some((_, feature, threshold)) = best_split(xs, resid, search, features, cfg.min_samples_leaf)
    else {
        return id;
    };
    let part = |rows: &[usize]| -> (Vec<usize>, Vec<usize>) {
        rows.iter().partition(|&&i| xs[i][feature] <= threshold)
    };
    let (sl, sr) = part(search);
    let (al, ar) = part(all);
    let left = grow_greedy(xs, resid, &sl, &al, features, depth - 1, cfg, nodes);
    let right = grow_greedy(xs, resid, &sr, &ar, features, depth - 1, cfg, nodes);
    nodes[id] = Node::Split {
        feature,
        threshold,
        left,
        right,
    };
    id
}

fn grow_oblivious(
    xs: &[Vec<f64>],
    resid: &[f64],
    search: &[usize],
    all: &[usize],
    features: &[usize],
    depth: usize,
) -> Tree {
    let mut levels: Vec<(usize, f64)> = Vec::new();
    let mut leaf_of: Vec<usize> = vec![0; xs.len()];
    for level in 0..depth {
        let n_leaves = 1usize << level;
        let mut sum = vec![0.0; n_leaves];
        let mut cnt = vec![0usize; n_leaves];
        for &i in search {
            sum[leaf_of[i]] += resid[i];
            cnt[leaf_of[i]] += 1;
        }
        let term = |s: f64, c: usize| if c == 0 { 0.0 } else { s * s / c as f64 };
        let base: f64 = (0..n_leaves).map(|l| term(sum[l], cnt[l])).sum();

        let mut best: Option<(f64, usize, f64)> = None;
        let mut sorted = search.to_vec();
        for &f in features {
            sorted.sort_by(|&a, &b| xs[a][f].total_cmp(&xs[b][f]).then(a.cmp(&b)));
            let mut lsum = vec![0.0; n_leaves];
            let mut lcnt = vec![0usize; n_leaves];
            let mut score = base;
            for k in 0..sorted.len().saturating_sub(1) {
                let i = sorted[k];
                let l = leaf_of[i];
                let before = term(lsum[l], lcnt[l]) + term(sum[l] - lsum[l], cnt[l] - lcnt[l]);
                lsum[l] += resid[i];
                lcnt[l] += 1;
                let after = term(lsum[l], lcnt[l]) + term(sum[l] - lsum[l], cnt[l] - lcnt[l]);
                score += after - before;
                let (lo, hi) = (xs[i][f], xs[sorted[k + 1]][f]);
                if lo == hi {
                    continue;
                }
                let gain = score - base;
                if gain > 1e-12 && best.is_none_or(|(g, _, _)| gain > g) {
                    best = Some((gain, f, lo + (hi - lo) / 2.0));
                }
            }
        }
        let Some((_, f, t)) = best else { break };
        levels.push((f, t));
        for i in 0..xs.len() {
            if xs[i][f] > t {
                leaf_of[i] |= 1 << level;
            }
        }
    }
    let n_leaves = 1usize << levels.len();
    let mut sum = vec![0.0; n_leaves];
    let mut cnt = vec![0usize; n_leaves];
    for &i in all {
        sum[leaf_of[i]] += resid[i];
        cnt[leaf_of[i]] += 1;
    }
    let leaves = (0..n_leaves)
        .map(|l| if cnt[l] == 0 { 0.0 } else { sum[l] / cnt[l] as f64 })
        .collect();
    Tree::Oblivious { levels, leaves }
}

pub fn train_gbrt(xs: &[Vec<f64>], ys: &[f64], cfg: &GbrtConfig) -> Result<Gbrt> {
    let dim = check_regression_data(xs, ys)?;
    if cfg.max_depth == 0 {
        return Err(Error::invalid("tree depth must be at least 1"));
    }
    if !(cfg.shrinkage > 0.0 && cfg.shrinkage <= 1.0) {
        return Err(Error::invalid("shrinkage must lie in (0, 1]"));
    }
    if !(cfg.subsample > 0.0 && cfg.subsample <= 1.0) || !(cfg.colsample > 0.0 && cfg.colsample <= 1.0) {
        return Err(Error::invalid("subsample and colsample must lie in (0, 1]"));
    }
    if cfg.tree == TreeKind::Oblivious && cfg.max_depth > 16 {
        return Err(Error::invalid("oblivious trees are limited to depth 16"));
    }
    let n = xs.len();
    let base_score = ys.iter().sum::<f64>() / n as f64;
    let mut pred = vec![base_score; n];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let all: Vec<usize> = (0..n).collect();
    let mut trees = Vec::with_capacity(cfg.rounds);
    let mut history = vec![rmse(ys, &pred)?];

    for _ in 0..cfg.rounds {
        let resid: Vec<f64> = ys.iter().zip(&pred).map(|(y, p)| y - p).collect();
        let search: Vec<usize> = if cfg.subsample < 1.0 {
            let k = ((n as f64 * cfg.subsample).round() as usize).clamp(1, n);
            let mut rows = all.clone();
            rows.shuffle(&mut rng);
            rows.truncate(k);
            rows.sort_unstable();
            rows
        } else {
            all.clone()
        };
        let features: Vec<usize> = if cfg.colsample < 1.0 {
            let k = ((dim as f64 * cfg.colsample).round() as usize).clamp(1, dim);
            let mut f: Vec<usize> = (0..dim).collect();
            f.shuffle(&mut rng);
            f.truncate(k);
            f.sort_unstable();
            f
        } else {
            (0..dim).collect()
        };
        let tree = match cfg.tree {
            TreeKind::Greedy => {
                let mut nodes = Vec::new();
                grow_greedy(xs, &resid, &search, &all, &features, cfg.max_depth, cfg, &mut nodes);
                Tree::Greedy { nodes }
            }
            TreeKind::Oblivious => grow_oblivious(xs, &resid, &search, &all, &features, cfg.max_depth),
        };
        for (p, x) in pred.iter_mut().zip(xs) {
            *p += cfg.shrinkage * tree.predict(x);
        }
        trees.push(tree);
        history.push(rmse(ys, &pred)?);
    }

    Ok(Gbrt {
        base_score,
        shrinkage: cfg.shrinkage,
        trees,
        train_rmse: history,
        config: cfg.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step_data() -> (Vec<Vec<f64>>, Vec<f64>) {
        let xs: Vec<Vec<f64>> = (0..40).map(|i| vec![i as f64 / 4.0]).collect();
        let ys = xs.iter().map(|x| if x[0] < 5.0 { -2.0 } else { 7.0 }).collect();
        (xs, ys)
    }

    #[test]
    fn zero_rounds_predict_mean() {
        let (xs, ys) = step_data();
        let m = train_gbrt(&xs, &ys, &GbrtConfig { rounds: 0, ..Default::default() }).unwrap();
        let mean = ys.iter().sum::<f64>() / ys.len() as f64;
        assert!(xs.iter().all(|x| m.predict(x) == mean));
    }

    #[test]
    fn stump_fits_step_exactly() {
        let (xs, ys) = step_data();
        for tree in [TreeKind::Greedy, TreeKind::Oblivious] {
            let cfg = GbrtConfig {
                rounds: 10,
                max_depth: 1,
                shrinkage: 1.0,
                tree,
                ..Default::default()
            };
            let m = train_gbrt(&xs, &ys, &cfg).unwrap();
            assert!(*m.train_rmse.last().unwrap() < 1e-6, "{tree:?}");
        }
    }

    #[test]
    fn training_rmse_monotone_with_subsampling() {
        let xs: Vec<Vec<f64>> = (0..60)
            .map(|i| vec![(i as f64 * 0.7).sin(), (i as f64 * 0.3).cos(), (i % 7) as f64])
            .collect();
        let ys: Vec<f64> = xs.iter().map(|x| x[0] * 3.0 + x[1] * x[2]).collect();
        for tree in [TreeKind::Greedy, TreeKind::Oblivious] {
            let cfg = GbrtConfig {
                rounds: 50,
                max_depth: 3,
                shrinkage: 0.3,
                subsample: 0.6,
                colsample: 0.67,
                tree,
                seed: 5,
                ..Default::default()
            };
            let m = train_gbrt(&xs, &ys, &cfg).unwrap();
            for w in m.train_rmse.windows(2) {
                assert!(w[1] <= w[0] + 1e-12, "{tree:?}: {w:?}");
            }
        }
    }

    #[test]
    fn rejects_bad_config() {
        let (xs, ys) = step_data();
        assert!(train_gbrt(&xs, &ys, &GbrtConfig { max_depth: 0, ..Default::default() }).is_err());
        assert!(train_gbrt(&xs, &ys, &GbrtConfig { shrinkage: 0.0, ..Default::default() }).is_err());
    }
}
