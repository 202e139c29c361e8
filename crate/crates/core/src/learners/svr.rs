//! Linear epsilon-insensitive support vector regression in the primal.
//!
//! Objective: `0.5 * |w|^2 + C * sum_i max(0, |w.x_i + b - y_i| - epsilon)`.
//!
//! Training runs full-batch subgradient descent with a diminishing step and
//! keeps the best iterate. The result is then refined on the active set: the
//! points on the tube boundary and outside it fix a linear KKT system whose
//! solution is accepted only if it is dual-feasible and does not raise the
//! objective.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{check_regression_data, Predictor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvrConfig {
    pub max_iter: usize,
    /// Relative objective improvement below which descent stops.
    pub tol: f64,
    /// Initial step, scaled by the subgradient Lipschitz bound.
    pub step: f64,
    pub refine: bool,
    pub seed: u64,
}

impl Default for SvrConfig {
    fn default() -> Self {
        SvrConfig {
            max_iter: 5000,
            tol: 1e-9,
            step: 1.0,
            refine: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearSvr {
    pub w: Vec<f64>,
    pub b: f64,
    pub epsilon: f64,
    pub c: f64,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub refined: bool,
    pub seed: u64,
}

impl Predictor for LinearSvr {
    fn predict(&self, x: &[f64]) -> f64 {
        self.b + self.w.iter().zip(x).map(|(w, x)| w * x).sum::<f64>()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Primal objective value.
pub fn svr_objective(w: &[f64], b: f64, xs: &[Vec<f64>], ys: &[f64], epsilon: f64, c: f64) -> f64 {
    let reg = 0.5 * dot(w, w);
    let loss: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| ((dot(w, x) + b - y).abs() - epsilon).max(0.0))
        .sum();
    reg + c * loss
}

pub fn train_svr(xs: &[Vec<f64>], ys: &[f64], epsilon: f64, c: f64, cfg: &SvrConfig) -> Result<LinearSvr> {
    let dim = check_regression_data(xs, ys)?;
    if !(epsilon >= 0.0) || !epsilon.is_finite() {
        return Err(Error::invalid("epsilon must be finite and non-negative"));
    }
    if !(c > 0.0) || !c.is_finite() {
        return Err(Error::invalid("C must be finite and positive"));
    }
    let n = xs.len();
    let sq_norm_sum: f64 = xs.iter().map(|x| dot(x, x) + 1.0).sum();
    let lipschitz = 1.0 + c * sq_norm_sum;

    let mut w = vec![0.0; dim];
    let mut b = ys.iter().sum::<f64>() / n as f64;
    let mut best = (w.clone(), b, svr_objective(&w, b, xs, ys, epsilon, c));
    let mut last_check = best.2;
    let mut converged = false;
    let mut iterations = 0;
    const WINDOW: usize = 200;

    for t in 1..=cfg.max_iter {
        iterations = t;
        let mut gw = w.clone();
        let mut gb = 0.0;
        for (x, y) in xs.iter().zip(ys) {
            let r = dot(&w, x) + b - y;
            if r.abs() > epsilon {
                let s = c * r.signum();
                gw.iter_mut().zip(x).for_each(|(g, xi)| *g += s * xi);
                gb += s;
            }
        }
        let eta = cfg.step / (lipschitz * (t as f64).sqrt());
        w.iter_mut().zip(&gw).for_each(|(wi, g)| *wi -= eta * g);
        b -= eta * gb;

        let obj = svr_objective(&w, b, xs, ys, epsilon, c);
        if obj < best.2 {
            best = (w.clone(), b, obj);
        }
        if t % WINDOW == 0 {
            if last_check - best.2 <= cfg.tol * (1.0 + best.2.abs()) {
                converged = true;
                break;
            }
            last_check = best.2;
        }
    }

    let (mut w, mut b, mut objective) = best;
    let mut refined = false;
    if cfg.refine {
        if let Some((rw, rb, robj)) = refine_active_set(&w, b, xs, ys, epsilon, c) {
            if robj <= objective + 1e-12 * (1.0 + objective.abs()) {
                w = rw;
                b = rb;
                objective = robj;
                refined = true;
                converged = true;
            }
        }
    }
    Ok(LinearSvr {
        w,
        b,
        epsilon,
        c,
        objective,
        iterations,
        converged,
        refined,
        seed: cfg.seed,
    })
}

/// Solves the KKT system for active sets guessed at several tolerances and
/// returns the best dual-feasible candidate.
fn refine_active_set(
    w: &[f64],
    b: f64,
    xs: &[Vec<f64>],
    ys: &[f64],
    epsilon: f64,
    c: f64,
) -> Option<(Vec<f64>, f64, f64)> {
    let dim = w.len();
    let mut best: Option<(Vec<f64>, f64, f64)> = None;
    let scale = 1.0 + ys.iter().fold(0.0f64, |m, y| m.max(y.abs()));
    for tau in [1e-1, 3e-2, 1e-2, 3e-3, 1e-3, 1e-4, 1e-5, 1e-6] {
        let tau = tau * scale;
        let mut cw = w.to_vec();
        let mut cb = b;
        // A few passes let the active set settle.
        for _ in 0..3 {
            let Some((nw, nb)) = kkt_solve(&cw, cb, xs, ys, epsilon, c, tau, dim) else {
                break;
            };
            cw = nw;
            cb = nb;
        }
        let obj = svr_objective(&cw, cb, xs, ys, epsilon, c);
        if !obj.is_finite() {
            continue;
        }
        if best.as_ref().is_none_or(|(_, _, o)| obj < *o) {
            best = Some((cw, cb, obj));
        }
    }
    best
}

#[allow(clippy::too_many_arguments)]
fn kkt_solve(
    w: &[f64],
    b: f64,
    xs: &[Vec<f64>],
    ys: &[f64],
    epsilon: f64,
    c: f64,
    tau: f64,
    dim: usize,
) -> Option<(Vec<f64>, f64)> {
    // Partition: outside the tube (g_i = C sign r_i), on the boundary
    // (unknown g_i, residual pinned to sign(r_i) * epsilon), inside (g_i = 0).
    let mut outside_w = vec![0.0; dim];
    let mut outside_b = 0.0;
    let mut boundary: Vec<(usize, f64)> = Vec::new();
    for (i, (x, y)) in xs.iter().zip(ys).enumerate() {
        let r = dot(w, x) + b - y;
        let excess = r.abs() - epsilon;
        if excess > tau {
            let g = c * r.signum();
            outside_w.iter_mut().zip(x).for_each(|(o, xi)| *o += g * xi);
            outside_b += g;
        } else if excess.abs() <= tau {
            boundary.push((i, if r >= 0.0 { 1.0 } else { -1.0 }));
        }
    }
    let m = boundary.len();
    if m == 0 {
        // The intercept is undetermined without boundary points.
        return None;
    }
    let size = dim + 1 + m;
    // Unknowns: [w (dim), b, g_B (m)].
    let mut a = DMatrix::<f64>::zeros(size, size);
    let mut rhs = DVector::<f64>::zeros(size);
    // Stationarity in w: w + sum_B g_i x_i = -sum_O g_i x_i.
    for j in 0..dim {
        a[(j, j)] = 1.0;
        for (k, &(i, _)) in boundary.iter().enumerate() {
            a[(j, dim + 1 + k)] = xs[i][j];
        }
        rhs[j] = -outside_w[j];
    }
    // Stationarity in b: sum_B g_i = -sum_O g_i.
    for k in 0..m {
        a[(dim, dim + 1 + k)] = 1.0;
    }
    rhs[dim] = -outside_b;
    // Boundary residuals: w.x_i + b - y_i = s_i * epsilon.
    for (k, &(i, s)) in boundary.iter().enumerate() {
        let row = dim + 1 + k;
        for j in 0..dim {
            a[(row, j)] = xs[i][j];
        }
        a[(row, dim)] = 1.0;
        rhs[row] = ys[i] + s * epsilon;
    }
    let svd = a.clone().svd(true, true);
    let sol = svd.solve(&rhs, 1e-12).ok()?;
    if sol.iter().any(|v| !v.is_finite()) {
        return None;
    }
    // Dual feasibility: g_i has the residual's sign and |g_i| <= C.
    let slack = 1e-9 * (1.0 + c);
    for (k, &(_, s)) in boundary.iter().enumerate() {
        let g = sol[dim + 1 + k] * s;
        if g < -slack || g > c + slack {
            return None;
        }
    }
    // The system must be satisfied, not just least-squares approximated.
    let resid = &a * &sol - &rhs;
    if resid.amax() > 1e-8 * (1.0 + rhs.amax()) {
        return None;
    }
    Some((sol.rows(0, dim).iter().copied().collect(), sol[dim]))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(n: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
        let xs: Vec<Vec<f64>> = (0..n).map(|i| vec![i as f64 / (n - 1) as f64]).collect();
        let ys = xs.iter().map(|x| 2.0 * x[0] + 1.0).collect();
        (xs, ys)
    }

    #[test]
    fn noise_free_line_inside_tube() {
        let (xs, ys) = line(21);
        let m = train_svr(&xs, &ys, 0.1, 10.0, &SvrConfig::default()).unwrap();
        for (x, y) in xs.iter().zip(&ys) {
            assert!((m.predict(x) - y).abs() <= 0.1 + 1e-9, "{}", m.predict(x) - y);
        }
        assert!(m.converged);
        // Minimum-norm slope that keeps [0,1] inside a 0.1 tube.
        assert!((m.w[0] - 1.8).abs() < 1e-6, "{:?}", m.w);
    }

    #[test]
    fn wide_tube_gives_zero_loss() {
        let (xs, ys) = line(10);
        let m = train_svr(&xs, &ys, 5.0, 1.0, &SvrConfig::default()).unwrap();
        assert!(m.w[0].abs() < 1e-9);
        assert_eq!(m.objective, 0.5 * m.w[0] * m.w[0]);
        assert!(m.objective < 1e-12);
    }

    #[test]
    fn deterministic() {
        let (xs, ys) = line(15);
        let cfg = SvrConfig { seed: 4, ..Default::default() };
        assert_eq!(
            train_svr(&xs, &ys, 0.05, 1.0, &cfg).unwrap(),
            train_svr(&xs, &ys, 0.05, 1.0, &cfg).unwrap()
        );
    }

    #[test]
    fn refinement_never_worsens_objective() {
        let xs: Vec<Vec<f64>> = (0..30)
            .map(|i| vec![(i as f64 * 0.37).sin(), (i as f64 * 0.11).cos()])
            .collect();
        let ys: Vec<f64> = xs
            .iter()
            .enumerate()
            .map(|(i, x)| 3.0 * x[0] - x[1] + 0.3 * ((i * 7 % 11) as f64 / 11.0 - 0.5))
            .collect();
        let plain = train_svr(&xs, &ys, 0.05, 2.0, &SvrConfig { refine: false, ..Default::default() }).unwrap();
        let refined = train_svr(&xs, &ys, 0.05, 2.0, &SvrConfig::default()).unwrap();
        assert!(refined.objective <= plain.objective + 1e-12);
    }

    #[test]
    fn nan_rejected() {
        let (mut xs, ys) = line(5);
        xs[2][0] = f64::NAN;
        assert!(train_svr(&xs, &ys, 0.1, 1.0, &SvrConfig::default()).is_err());
    }
}
