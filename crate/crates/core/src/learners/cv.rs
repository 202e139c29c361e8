//! K-fold grid search.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Predictor;
use crate::error::{Error, Result};
use crate::evaluation::rmse;

/// Fold index per sample: a seeded shuffle dealt round-robin into `folds`.
pub fn fold_assignment(n: usize, folds: usize, seed: u64) -> Result<Vec<usize>> {
    if folds < 2 {
        return Err(Error::invalid("cross-validation needs at least 2 folds"));
    }
    if n < folds {
        return Err(Error::invalid(format!(
            "{n} samples cannot fill {folds} folds"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut assignment = vec![0; n];
    for (k, &i) in order.iter().enumerate() {
        assignment[i] = k % folds;
    }
    Ok(assignment)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvOutcome<P> {
    pub best_index: usize,
    pub best: P,
    /// Mean validation RMSE per lattice point, in lattice order.
    pub mean_rmse: Vec<f64>,
    pub folds: Vec<usize>,
}

/// Evaluates every lattice point on the same folds and returns the one with
/// the lowest mean validation RMSE; ties go to the earlier point.
pub fn grid_search_cv<P, M, F>(
    grid: &[P],
    xs: &[Vec<f64>],
    ys: &[f64],
    folds: usize,
    seed: u64,
    mut fit: F,
) -> Result<CvOutcome<P>>
where
    P: Clone,
    M: Predictor,
    F: FnMut(&P, &[Vec<f64>], &[f64]) -> Result<M>,
{
    if grid.is_empty() {
        return Err(Error::invalid("hyperparameter grid is empty"));
    }
    if xs.len() != ys.len() {
        return Err(Error::dim(xs.len(), ys.len(), "targets vs samples"));
    }
    let assignment = fold_assignment(xs.len(), folds, seed)?;
    let mut mean_rmse = Vec::with_capacity(grid.len());
    for point in grid {
        let mut total = 0.0;
        for fold in 0..folds {
            let (mut tx, mut ty, mut vx, mut vy) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
            for (i, &a) in assignment.iter().enumerate() {
                if a == fold {
                    vx.push(xs[i].clone());
                    vy.push(ys[i]);
                } else {
                    tx.push(xs[i].clone());
                    ty.push(ys[i]);
                }
            }
            let model = fit(point, &tx, &ty)?;
            let pred: Vec<f64> = vx.iter().map(|x| model.predict(x)).collect();
            total += rmse(&vy, &pred)?;
        }
        let mean = total / folds as f64;
        mean_rmse.push(if mean.is_nan() { f64::INFINITY } else { mean });
    }
    let mut best_index = 0;
    for (i, &r) in mean_rmse.iter().enumerate() {
        if r < mean_rmse[best_index] {
            best_index = i;
        }
    }
    Ok(CvOutcome {
        best_index,
        best: grid[best_index].clone(),
        mean_rmse,
        folds: assignment,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Const(f64);
    impl Predictor for Const {
        fn predict(&self, _: &[f64]) -> f64 {
            self.0
        }
    }

    struct Scale(f64);
    impl Predictor for Scale {
        fn predict(&self, x: &[f64]) -> f64 {
            self.0 * x[0]
        }
    }

    fn data() -> (Vec<Vec<f64>>, Vec<f64>) {
        let xs: Vec<Vec<f64>> = (0..12).map(|i| vec![i as f64]).collect();
        let ys = xs.iter().map(|x| 3.0 * x[0]).collect();
        (xs, ys)
    }

    #[test]
    fn single_point_grid() {
        let (xs, ys) = data();
        let out = grid_search_cv(&[7.0], &xs, &ys, 4, 1, |&c, _, _| Ok(Const(c))).unwrap();
        assert_eq!(out.best, 7.0);
    }

    #[test]
    fn exact_fit_point_wins() {
        let (xs, ys) = data();
        let grid = [1.0, 2.0, 3.0, 4.0];
        let out = grid_search_cv(&grid, &xs, &ys, 4, 1, |&k, _, _| Ok(Scale(k))).unwrap();
        assert_eq!(out.best, 3.0);
        assert_eq!(out.mean_rmse[2], 0.0);
    }

    #[test]
    fn folds_are_balanced_and_seeded() {
        let a = fold_assignment(10, 4, 3).unwrap();
        let b = fold_assignment(10, 4, 3).unwrap();
        assert_eq!(a, b);
        let mut counts = [0; 4];
        a.iter().for_each(|&f| counts[f] += 1);
        assert_eq!(counts.iter().max().unwrap() - counts.iter().min().unwrap(), 1);
    }

    #[test]
    fn ties_keep_lattice_order() {
        let (xs, ys) = data();
        let out = grid_search_cv(&["a", "b"], &xs, &ys, 3, 0, |_, _, _| Ok(Const(0.0))).unwrap();
        assert_eq!(out.best, "a");
    }

    #[test]
    fn errors() {
        let (xs, ys) = data();
        assert!(grid_search_cv::<f64, Const, _>(&[], &xs, &ys, 4, 0, |&c, _, _| Ok(Const(c))).is_err());
        assert!(grid_search_cv(&[1.0], &xs[..3], &ys[..3], 4, 0, |&c, _, _| Ok(Const(c))).is_err());
    }
}
