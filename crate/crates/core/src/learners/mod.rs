//! Natively trained models: the classification head, linear SVR, gradient
//! boosted trees and grid-search cross-validation.

pub mod cv;
pub mod gbrt;
pub mod head;
pub mod svr;

use serde::{Deserialize, Serialize};

pub use cv::{fold_assignment, grid_search_cv, CvOutcome};
pub use gbrt::{train_gbrt, Gbrt, GbrtConfig, TreeKind};
pub use head::{
    train_binary_head, train_head, BinaryHead, BinaryPrediction, ClassifierHead, TrainConfig,
};
pub use svr::{train_svr, LinearSvr, SvrConfig};

use crate::error::{Error, Result};

pub trait Predictor {
    fn predict(&self, x: &[f64]) -> f64;
}

/// Validates a regression design matrix; returns the feature dimension.
pub(crate) fn check_regression_data(xs: &[Vec<f64>], ys: &[f64]) -> Result<usize> {
    if xs.len() != ys.len() {
        return Err(Error::dim(xs.len(), ys.len(), "targets vs samples"));
    }
    if xs.len() < 2 {
        return Err(Error::invalid("regression needs at least two samples"));
    }
    let dim = xs[0].len();
    for (i, x) in xs.iter().enumerate() {
        if x.len() != dim {
            return Err(Error::dim(dim, x.len(), format!("sample {i}")));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("sample {i} contains NaN or infinity")));
        }
    }
    if ys.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("targets contain NaN or infinity"));
    }
    Ok(dim)
}

/// Per-feature z-scoring fitted on training data. Constant features map to 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(xs: &[Vec<f64>]) -> Self {
        let dim = xs.first().map_or(0, Vec::len);
        let n = xs.len().max(1) as f64;
        let mut mean = vec![0.0; dim];
        for x in xs {
            mean.iter_mut().zip(x).for_each(|(m, v)| *m += v / n);
        }
        let mut var = vec![0.0; dim];
        for x in xs {
            var.iter_mut()
                .zip(x.iter().zip(&mean))
                .for_each(|(s, (v, m))| *s += (v - m) * (v - m) / n);
        }
        let scale = var
            .into_iter()
            .map(|v| if v > 1e-24 { v.sqrt() } else { 0.0 })
            .collect();
        Standardizer { mean, scale }
    }

    pub fn transform(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(v, (m, s))| if *s > 0.0 { (v - m) / s } else { 0.0 })
            .collect()
    }

    pub fn transform_all(&self, xs: &[Vec<f64>]) -> Vec<Vec<f64>> {
        xs.iter().map(|x| self.transform(x)).collect()
    }
}

/// A trained regression model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Regressor {
    LinearSvr(LinearSvr),
    Gbrt(Gbrt),
}

impl Predictor for Regressor {
    fn predict(&self, x: &[f64]) -> f64 {
        match self {
            Regressor::LinearSvr(m) => m.predict(x),
            Regressor::Gbrt(m) => m.predict(x),
        }
    }
}

/// Model family of a regression pool member.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegressorKind {
    Svr,
    Gbrt,
    ObliviousGbrt,
}

/// One hyperparameter lattice point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum HyperPoint {
    Svr { epsilon: f64, c: f64 },
    Gbrt { rounds: usize, depth: usize, shrinkage: f64 },
}

/// Model family plus the lattice searched by cross-validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressorSpec {
    pub name: String,
    pub kind: RegressorKind,
    #[serde(default)]
    pub grid: Vec<HyperPoint>,
    /// Row fraction for split search (boosting only).
    #[serde(default = "default_sample")]
    pub subsample: f64,
    /// Feature fraction per round (boosting only).
    #[serde(default = "default_sample")]
    pub colsample: f64,
}

fn default_sample() -> f64 {
    0.8
}

impl RegressorSpec {
    pub fn svr(name: &str) -> Self {
        let mut grid = Vec::new();
        for epsilon in [0.5, 1.0, 2.0] {
            for c in [0.01, 0.1, 1.0] {
                grid.push(HyperPoint::Svr { epsilon, c });
            }
        }
        RegressorSpec {
            name: name.into(),
            kind: RegressorKind::Svr,
            grid,
            subsample: 1.0,
            colsample: 1.0,
        }
    }

    pub fn gbrt(name: &str, kind: RegressorKind) -> Self {
        let mut grid = Vec::new();
        for rounds in [30, 80] {
            for depth in [2, 3] {
                for shrinkage in [0.05, 0.1] {
                    grid.push(HyperPoint::Gbrt {
                        rounds,
                        depth,
                        shrinkage,
                    });
                }
            }
        }
        RegressorSpec {
            name: name.into(),
            kind,
            grid,
            subsample: 0.8,
            colsample: 0.8,
        }
    }

    /// Three families: linear SVR, greedy boosting and oblivious boosting.
    pub fn default_pool() -> Vec<RegressorSpec> {
        vec![
            RegressorSpec::svr("svr"),
            RegressorSpec::gbrt("gbrt", RegressorKind::Gbrt),
            RegressorSpec::gbrt("oblivious-gbrt", RegressorKind::ObliviousGbrt),
        ]
    }

    /// Standardizes features and fits at `point`.
    pub fn fit(&self, point: &HyperPoint, xs: &[Vec<f64>], ys: &[f64], seed: u64) -> Result<FittedRegressor> {
        let scaler = Standardizer::fit(xs);
        let zs = scaler.transform_all(xs);
        let model = match (self.kind, point) {
            (RegressorKind::Svr, HyperPoint::Svr { epsilon, c }) => {
                let cfg = SvrConfig {
                    seed,
                    ..SvrConfig::default()
                };
                Regressor::LinearSvr(train_svr(&zs, ys, *epsilon, *c, &cfg)?)
            }
            (RegressorKind::Gbrt | RegressorKind::ObliviousGbrt, HyperPoint::Gbrt { rounds, depth, shrinkage }) => {
                let cfg = GbrtConfig {
                    rounds: *rounds,
                    max_depth: *depth,
                    shrinkage: *shrinkage,
                    subsample: self.subsample,
                    colsample: self.colsample,
                    tree: if self.kind == RegressorKind::Gbrt {
                        TreeKind::Greedy
                    } else {
                        TreeKind::Oblivious
                    },
                    seed,
                    ..GbrtConfig::default()
                };
                Regressor::Gbrt(train_gbrt(&zs, ys, &cfg)?)
            }
            (kind, point) => {
                return Err(Error::Config(format!(
                    "hyperparameter point {point:?} does not fit model family {kind:?}"
                )))
            }
        };
        Ok(FittedRegressor { scaler, model })
    }
}

/// A regressor with the feature scaling it was trained under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedRegressor {
    pub scaler: Standardizer,
    pub model: Regressor,
}

impl Predictor for FittedRegressor {
    fn predict(&self, x: &[f64]) -> f64 {
        self.model.predict(&self.scaler.transform(x))
    }
}
